#![allow(dead_code)]

use std::path::{Path, PathBuf};

use avsm::config::RunConfig;
use avsm_core::model::ModelConfig;
use sha2::{Digest, Sha256};

pub fn docs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

/// Validates `instance` against `docs/<name>.schema.json`, returning the
/// error messages.
pub fn schema_errors(name: &str, instance: &serde_json::Value) -> Vec<String> {
    let path = docs_dir().join(format!("{name}.schema.json"));
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

pub fn assert_schema(name: &str, text: &str) {
    let value: serde_json::Value = serde_json::from_str(text).unwrap();
    let errs = schema_errors(name, &value);
    assert!(errs.is_empty(), "{name}: {errs:?}");
}

/// SHA-256 over every file under `dir`, keyed by relative path.
pub fn dir_checksum(dir: &Path) -> String {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

pub fn file_sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// A small audio-only run over `manifest` writing under `run`.
pub fn tiny_run(manifest: &Path, run: &Path, max_steps: u64, eval_every: u64) -> RunConfig {
    let mut cfg = RunConfig { model: ModelConfig { use_visual: false, ..ModelConfig::tiny() }, ..RunConfig::default() };
    cfg.optimizer.lr = 4e-3;
    cfg.training.max_steps = max_steps;
    cfg.training.eval_every = eval_every;
    cfg.paths.manifest = manifest.to_path_buf();
    cfg.paths.checkpoint_dir = run.join("checkpoints");
    cfg.paths.report_dir = run.join("reports");
    cfg
}

/// Silence-trimmed power of `clean` over `region`: 20 ms frames, frames
/// more than 40 dB below the loudest are dropped.
pub fn active_power(clean: &[f64], region: std::ops::Range<usize>) -> f64 {
    let energy: Vec<f64> = clean.chunks(320).map(|f| f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).collect();
    let loudest = energy.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<f64> = region.filter(|i| energy[i / 320] >= loudest * 1e-4).map(|i| clean[i] * clean[i]).collect();
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn measured_snr(clean: &[f64], stem: &[f64], region: std::ops::Range<usize>) -> f64 {
    let ps = stem[region.clone()].iter().map(|v| v * v).sum::<f64>() / region.len() as f64;
    10.0 * (active_power(clean, region) / ps).log10()
}

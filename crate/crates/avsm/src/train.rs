//! The training driver: scene loading, gradient accumulation, periodic
//! evaluation on a held scene, checkpoints and the JSON-lines log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use avsm_core::autodiff::AdamWState;
use avsm_core::dsp::AudioBuffer;
use avsm_core::loss::LossTerms;
use avsm_core::metrics::si_sdr_samples;
use avsm_core::model::{Model, VisualEmbeddingSequence};
use avsm_core::rng::Rng;
use avsm_core::train::{apply_update, compute_gradients, Example, GradAccumulator};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{load_manifest, manifest_dir, mix_scene, read_scene_visual, scene_dir, SceneManifest};
use crate::wav::read_wav;

pub const LOG_FILE: &str = "train_log.jsonl";
/// Wall-clock times for each log line, kept apart so the log itself is
/// reproducible.
pub const TIMES_FILE: &str = "train_log.times.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// One noisy/clean pair plus its visual embeddings.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub id: String,
    pub noisy: AudioBuffer,
    pub clean: AudioBuffer,
    pub visual: Option<VisualEmbeddingSequence>,
}

/// Loads a scene, preferring the pre-mixed files and mixing from sources
/// when they are absent.
pub fn load_scene(manifest: &SceneManifest, base: &Path, id: &str) -> Result<SceneData> {
    let spec = manifest
        .scene(id)
        .ok_or_else(|| Error::Config(format!("scene `{id}` is not in the manifest")))?;
    let dir = scene_dir(base, id);
    let (noisy, clean) = if dir.join("noisy.wav").is_file() && dir.join("clean.wav").is_file() {
        (read_wav(&dir.join("noisy.wav"))?, read_wav(&dir.join("clean.wav"))?)
    } else {
        let m = mix_scene(spec, base)?;
        (m.noisy, m.clean)
    };
    let visual = read_scene_visual(base, spec)?;
    Ok(SceneData { id: id.to_string(), noisy, clean, visual })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean loss over the examples of the last optimizer step.
    pub loss: LossTerms,
    pub held_scene: String,
    pub si_sdr_db: f64,
    pub si_sdr_improvement_db: f64,
}

#[derive(Clone, Debug, Serialize)]
struct TimeRecord {
    step: u64,
    unix_ms: u128,
    elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub first_loss: Option<f64>,
    pub last: Option<LogRecord>,
    pub checkpoint: PathBuf,
    pub model: Model,
}

fn mean_terms(sum: &LossTerms, n: usize) -> LossTerms {
    let k = n.max(1) as f64;
    LossTerms {
        time: sum.time / k,
        magnitude: sum.magnitude / k,
        complex: sum.complex / k,
        phase: sum.phase / k,
        consistency: sum.consistency / k,
        total: sum.total / k,
    }
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms) {
    acc.time += t.time;
    acc.magnitude += t.magnitude;
    acc.complex += t.complex;
    acc.phase += t.phase;
    acc.consistency += t.consistency;
    acc.total += t.total;
}

/// Scene index of the `k`-th example drawn: a fresh seeded permutation of
/// the scenes per epoch, so the order depends only on `(seed, k)`.
pub fn example_order(seed: u64, n_scenes: usize, k: u64) -> usize {
    let epoch = k / n_scenes as u64;
    let mut perm: Vec<usize> = (0..n_scenes).collect();
    let mut rng = Rng::stream(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15), "scene-order");
    for i in (1..n_scenes).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    perm[(k % n_scenes as u64) as usize]
}

pub fn held_scene_score(model: &Model, scene: &SceneData) -> Result<(f64, f64)> {
    let out = model.forward(&scene.noisy, scene.visual.as_ref())?;
    let sdr = si_sdr_samples(&scene.clean.samples, &out.enhanced.samples)?;
    let base = si_sdr_samples(&scene.clean.samples, &scene.noisy.samples)?;
    Ok((sdr, sdr - base))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Runs training per `cfg`, optionally continuing from a checkpoint.
/// `on_record` sees every log line as it is written.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, mut on_record: impl FnMut(&LogRecord)) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let base = manifest_dir(&cfg.paths.manifest).to_path_buf();
    let ids: Vec<String> = match &cfg.training.scenes {
        Some(ids) => ids.clone(),
        None => manifest.scenes.iter().map(|s| s.scene_id.clone()).collect(),
    };
    if ids.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let scenes = ids.iter().map(|id| load_scene(&manifest, &base, id)).collect::<Result<Vec<_>>>()?;
    let held_id = cfg.training.held_scene.clone().unwrap_or_else(|| ids[0].clone());
    let held = match scenes.iter().find(|s| s.id == held_id) {
        Some(s) => s.clone(),
        None => load_scene(&manifest, &base, &held_id)?,
    };
    if cfg.model.use_visual {
        if let Some(s) = scenes.iter().chain(std::iter::once(&held)).find(|s| s.visual.is_none()) {
            return Err(Error::Config(format!("use_visual is true but scene `{}` has no visual_path", s.id)));
        }
    }

    let (mut model, mut opt_state, start) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config != cfg.model {
                return Err(Error::Config(format!("{}: model config differs from the run config", path.display())));
            }
            let step = ck.step;
            let opt = ck.optimizer.clone().unwrap_or(AdamWState { step, ..Default::default() });
            (ck.into_model()?, opt, step)
        }
        None => (Model::new(cfg.model.clone())?, AdamWState::default(), 0),
    };

    let examples = scenes
        .iter()
        .map(|s| {
            let v = if cfg.model.use_visual { s.visual.clone() } else { None };
            Example::new(&model, s.noisy.samples.clone(), s.clean.samples.clone(), v)
        })
        .collect::<avsm_core::Result<Vec<_>>>()?;

    for d in [&cfg.paths.checkpoint_dir, &cfg.paths.report_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let log_path = cfg.paths.report_dir.join(LOG_FILE);
    let times_path = cfg.paths.report_dir.join(TIMES_FILE);
    let latest = cfg.paths.checkpoint_dir.join(LATEST_CHECKPOINT);
    let adamw = cfg.optimizer.adamw();
    let accum = cfg.optimizer.grad_accum;
    let clock = Instant::now();

    let mut first_loss = None;
    let mut last = None;
    let mut step = start;
    while step < cfg.training.max_steps {
        let mut acc = GradAccumulator::default();
        let mut sum = LossTerms::default();
        for k in 0..accum {
            let idx = example_order(cfg.training.seed, examples.len(), step * accum as u64 + k as u64);
            let out = compute_gradients(&model, &examples[idx], &cfg.loss)?;
            add_terms(&mut sum, &out.terms);
            acc.add(out.grads)?;
        }
        let terms = mean_terms(&sum, accum);
        first_loss.get_or_insert(terms.total);
        apply_update(&mut model, &acc.take_mean(), &mut opt_state, &adamw)?;
        step += 1;

        if step % cfg.training.eval_every == 0 || step == cfg.training.max_steps {
            let (sdr, imp) = held_scene_score(&model, &held)?;
            let rec = LogRecord {
                step,
                loss: terms,
                held_scene: held.id.clone(),
                si_sdr_db: sdr,
                si_sdr_improvement_db: imp,
            };
            append_line(&log_path, &serde_json::to_string(&rec).expect("log record serializes"))?;
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
            let t = TimeRecord { step, unix_ms: now, elapsed_s: clock.elapsed().as_secs_f64() };
            append_line(&times_path, &serde_json::to_string(&t).expect("time record serializes"))?;
            save_checkpoint(&latest, &Checkpoint::from_model(&model, step, Some(&opt_state)))?;
            on_record(&rec);
            let done = cfg.training.target_improvement_db.is_some_and(|target| imp >= target);
            last = Some(rec);
            if done {
                break;
            }
        }
    }
    Ok(TrainSummary { steps: step, first_loss, last, checkpoint: latest, model })
}

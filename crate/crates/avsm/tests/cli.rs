mod common;

use std::path::Path;

use avsm::checkpoint::{save_checkpoint, Checkpoint};
use avsm::cli::run;
use avsm::config::{parse_run_config, RunConfig};
use avsm::manifest::MANIFEST_FILE;
use avsm::wav::read_wav;
use avsm::Error;
use avsm_core::model::{Model, ModelConfig};
use common::{assert_schema, dir_checksum, file_sha};

fn avsm(args: &[&str]) -> i32 {
    run(std::iter::once("avsm").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(avsm(&[]), 2);
    assert_eq!(avsm(&["frobnicate"]), 2);
    assert_eq!(avsm(&["mix", "--out", "/tmp/x"]), 2);
    assert_eq!(avsm(&["eval", "--manifest", "m.json", "--report", "r.json"]), 2);
    assert_eq!(avsm(&["eval", "--passthrough", "--checkpoint", "c", "--manifest", "m.json", "--report", "r.json"]), 2);
    assert_eq!(avsm(&["--help"]), 0);
    assert_eq!(avsm(&["--print-config"]), 0);
}

#[test]
fn printed_defaults_parse_back_and_match_the_schema() {
    let text = RunConfig::default().to_json_pretty();
    assert_schema("config", &text);
    assert_eq!(parse_run_config(&text).unwrap(), RunConfig::default());
    assert_eq!(parse_run_config("{}").unwrap(), RunConfig::default());
}

#[test]
fn bad_config_fields_are_named() {
    let cases = [
        (r#"{"optimizer": {"lr": "fast"}}"#, "optimizer.lr"),
        (r#"{"training": {"max_step": 3}}"#, "training"),
        (r#"{"model": {"stft": {"hop": -1}}}"#, "model.stft.hop"),
        (r#"{"optimizer": {"grad_accum": 0}}"#, "optimizer.grad_accum"),
        (r#"{"loss": {"w_time": -1.0}}"#, "w_time"),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in cases {
        match parse_run_config(text) {
            Err(e @ Error::Config(_)) => {
                assert!(e.to_string().contains(field), "{e} should name {field}");
                assert_eq!(e.exit_code(), 2);
            }
            other => panic!("{text}: {other:?}"),
        }
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        assert_eq!(avsm(&["train", "--config", s(&path)]), 2, "{text}");
    }
    assert_eq!(avsm(&["train", "--config", s(&dir.path().join("absent.json"))]), 2);
}

#[test]
fn unwritable_output_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    // a directory can never be created beneath a regular file, even as root
    let out = file.join("corpus");
    assert_eq!(avsm(&["mix", "--spec-count", "1", "--out", s(&out)]), 2);
    assert_eq!(avsm(&["mix", "--spec-count", "1", "--out", s(dir.path()), "--duration", "0"]), 2);
}

#[test]
fn mix_is_bitwise_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(avsm(&["mix", "--spec-count", "3", "--seed", "9", "--out", s(d.path()), "--duration", "0.5"]), 0);
    }
    assert_eq!(dir_checksum(a.path()), dir_checksum(b.path()));
}

fn tiny_checkpoint(dir: &Path, use_visual: bool) -> std::path::PathBuf {
    let model = Model::new(ModelConfig { use_visual, visual_dim: 64, ..ModelConfig::tiny() }).unwrap();
    let path = dir.join(if use_visual { "av.ckpt" } else { "a.ckpt" });
    save_checkpoint(&path, &Checkpoint::from_model(&model, 0, None)).unwrap();
    path
}

#[test]
fn enhance_keeps_duration_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(avsm(&["mix", "--spec-count", "1", "--out", s(d), "--duration", "0.5"]), 0);
    let noisy = d.join("scenes/scene_0000/noisy.wav");
    let vemb = d.join("scenes/scene_0000.vemb");
    for visual in [false, true] {
        let ck = tiny_checkpoint(d, visual);
        let (o1, o2) = (d.join("o1.wav"), d.join("o2.wav"));
        for o in [&o1, &o2] {
            assert_eq!(avsm(&["enhance", "--checkpoint", s(&ck), "--in", s(&noisy), "--vemb", s(&vemb), "--out", s(o)]), 0);
        }
        assert_eq!(file_sha(&o1), file_sha(&o2));
        assert_eq!(read_wav(&o1).unwrap().len(), read_wav(&noisy).unwrap().len());
    }

    // a visual checkpoint without embeddings is refused
    let av = tiny_checkpoint(d, true);
    assert_eq!(avsm(&["enhance", "--checkpoint", s(&av), "--in", s(&noisy), "--out", s(&d.join("x.wav"))]), 2);
    assert_eq!(avsm(&["enhance", "--checkpoint", s(&av), "--in", s(&d.join("none.wav")), "--out", s(&d.join("x.wav"))]), 2);
    // a damaged checkpoint is a processing failure
    let bad = d.join("bad.ckpt");
    std::fs::write(&bad, b"AVSMnot really").unwrap();
    assert_eq!(avsm(&["enhance", "--checkpoint", s(&bad), "--in", s(&noisy), "--out", s(&d.join("x.wav"))]), 1);
}

#[test]
fn passthrough_eval_writes_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(avsm(&["mix", "--spec-count", "2", "--seed", "4", "--out", s(d)]), 0);
    let report = d.join("reports/passthrough.json");
    let manifest = d.join(MANIFEST_FILE);
    assert_eq!(avsm(&["eval", "--passthrough", "--manifest", s(&manifest), "--report", s(&report)]), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert_schema("report", &text);
    let r: avsm::eval::MetricsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.rows.len(), 2);
    for row in &r.rows {
        assert_eq!(row.si_sdr_improvement_db, 0.0);
    }
    assert_eq!(r.mean.si_sdr_improvement_db, 0.0);
    let table = std::fs::read_to_string(report.with_extension("txt")).unwrap();
    assert!(table.contains("scene_0001") && table.contains("mean"));
    // a visual checkpoint on this manifest scores too
    let ck = tiny_checkpoint(d, true);
    let r2 = d.join("reports/av.json");
    assert_eq!(avsm(&["eval", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--report", s(&r2)]), 0);
    assert_schema("report", &std::fs::read_to_string(&r2).unwrap());
}

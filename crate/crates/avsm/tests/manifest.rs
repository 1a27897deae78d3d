mod common;

use std::path::Path;

use avsm::manifest::{
    generate_toy_corpus, load_manifest, mix_scene, parse_manifest, read_scene_pair, scene_dir, write_manifest,
    SceneManifest, MANIFEST_FILE,
};
use avsm::wav::{read_wav, write_wav};
use avsm::Error;
use avsm_core::data::{SceneSpec, ToyCorpusConfig};
use avsm_core::dsp::AudioBuffer;
use common::{assert_schema, dir_checksum, measured_snr};

fn short() -> ToyCorpusConfig {
    ToyCorpusConfig { duration_s: 0.25, ..Default::default() }
}

#[test]
fn manifest_round_trips_and_matches_its_schema() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_corpus(2, 7, dir.path(), &short()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_schema("manifest", &text);
    assert_eq!(load_manifest(&path).unwrap(), m);
    let copy = dir.path().join("copy.json");
    write_manifest(&copy, &m).unwrap();
    assert_eq!(std::fs::read_to_string(&copy).unwrap(), text);
}

fn scene(id: &str, target: &str) -> SceneSpec {
    SceneSpec {
        scene_id: id.into(),
        target_path: target.into(),
        interferer_path: None,
        noise_path: Some("t.wav".into()),
        snr_interferer_db: 0.0,
        snr_noise_db: 0.0,
        seed: 0,
        interferer_placement: Default::default(),
        noise_placement: Default::default(),
        visual_path: None,
    }
}

#[test]
fn validation_failures_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(&dir.path().join("t.wav"), &AudioBuffer::new(vec![0.1; 800], 16_000).unwrap()).unwrap();

    let dup = SceneManifest::new(vec![scene("a", "t.wav"), scene("a", "t.wav")]);
    match dup.validate_files(dir.path()) {
        Err(Error::Validation(msg)) => assert!(msg.contains("duplicate scene_id `a`"), "{msg}"),
        other => panic!("{other:?}"),
    }

    let dangling = SceneManifest::new(vec![scene("a", "t.wav"), scene("b", "gone.wav")]);
    match dangling.validate_files(dir.path()) {
        Err(Error::Validation(msg)) => assert!(msg.contains("gone.wav"), "{msg}"),
        other => panic!("{other:?}"),
    }

    let p = Path::new("m.json");
    let unknown = r#"{"version":1,"sample_rate":16000,"scenes":[{"scene_id":"a","target_path":"t.wav","snr":3}]}"#;
    match parse_manifest(unknown, p) {
        Err(Error::Validation(msg)) => assert!(msg.contains("scenes[0]"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let wrong_rate = SceneManifest { sample_rate: 8000, ..SceneManifest::new(vec![]) };
    assert!(matches!(wrong_rate.validate_schema(), Err(Error::Validation(_))));

    // a 44.1 kHz source is refused with a resampling hint
    let spec = hound::WavSpec { channels: 1, sample_rate: 44_100, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(dir.path().join("hi.wav"), spec).unwrap();
    for i in 0..100 {
        w.write_sample(i as i16).unwrap();
    }
    w.finalize().unwrap();
    let hi = SceneManifest::new(vec![scene("a", "hi.wav")]);
    assert!(matches!(hi.validate_files(dir.path()), Err(Error::ResampleRequired { found: 44_100, .. })));
}

#[test]
fn empty_corpus_has_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_corpus(0, 1, dir.path(), &short()).unwrap();
    assert!(m.scenes.is_empty());
    assert_eq!(load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
}

#[test]
fn corpus_generation_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = ToyCorpusConfig::default();
    generate_toy_corpus(10, 42, a.path(), &cfg).unwrap();
    generate_toy_corpus(10, 42, b.path(), &cfg).unwrap();
    generate_toy_corpus(10, 43, c.path(), &cfg).unwrap();
    assert_eq!(dir_checksum(a.path()), dir_checksum(b.path()));
    assert_ne!(dir_checksum(a.path()), dir_checksum(c.path()));
}

#[test]
fn written_stems_hit_the_requested_snrs() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_corpus(12, 5, dir.path(), &ToyCorpusConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for spec in &m.scenes {
        let sd = scene_dir(dir.path(), &spec.scene_id);
        let (noisy, clean) = read_scene_pair(dir.path(), &spec.scene_id).unwrap();
        let n = clean.len();
        let interferer = read_wav(&sd.join("interferer_scaled.wav")).unwrap();
        let noise = read_wav(&sd.join("noise_scaled.wav")).unwrap();
        let isrc = read_wav(&dir.path().join(spec.interferer_path.as_ref().unwrap())).unwrap();
        let nsrc = read_wav(&dir.path().join(spec.noise_path.as_ref().unwrap())).unwrap();
        let ri = spec.interferer_placement.region(n, isrc.len());
        let rn = spec.noise_placement.region(n, nsrc.len());
        worst = worst.max((measured_snr(&clean.samples, &interferer.samples, ri) - spec.snr_interferer_db).abs());
        worst = worst.max((measured_snr(&clean.samples, &noise.samples, rn) - spec.snr_noise_db).abs());
        // the stored mixture is the quantized sum of the stored parts
        for i in 0..n {
            let sum = clean.samples[i] + interferer.samples[i] + noise.samples[i];
            assert!((noisy.samples[i] - sum).abs() <= 2.0 / 32768.0);
        }
        // remixing from the sources reproduces the stored mixture
        let again = mix_scene(spec, dir.path()).unwrap();
        for (a, b) in again.noisy.samples.iter().zip(&noisy.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }
    assert!(worst < 0.1, "worst SNR error {worst} dB");
}

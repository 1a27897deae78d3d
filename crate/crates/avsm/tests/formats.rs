use std::path::Path;

use avsm::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use avsm::vemb::{decode_vemb, encode_vemb, read_vemb, write_vemb};
use avsm::wav::{read_wav, read_wav_from, to_pcm16, write_wav};
use avsm::Error;
use avsm_core::autodiff::AdamWState;
use avsm_core::dsp::AudioBuffer;
use avsm_core::model::{EmbeddingSource, Model, ModelConfig, VisualEmbeddingSequence};
use avsm_core::rng::Rng;

fn signal(seed: u64, n: usize) -> AudioBuffer {
    let mut rng = Rng::new(seed);
    AudioBuffer::new((0..n).map(|_| rng.uniform(-0.9, 0.9)).collect(), 16_000).unwrap()
}

#[test]
fn wav_round_trip_quantizes_to_pcm16() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let x = signal(1, 4321);
    write_wav(&path, &x).unwrap();
    let y = read_wav(&path).unwrap();
    assert_eq!(y.len(), x.len());
    assert_eq!(y.sample_rate, 16_000);
    for (a, b) in x.samples.iter().zip(&y.samples) {
        assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
    }
    // a second pass is lossless
    let path2 = dir.path().join("y.wav");
    write_wav(&path2, &y).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn pcm_conversion_clips() {
    assert_eq!(to_pcm16(1.5), 32767);
    assert_eq!(to_pcm16(-1.5), -32767);
    assert_eq!(to_pcm16(0.0), 0);
    assert_eq!(to_pcm16(f64::NAN), 0);
}

fn write_raw_wav(path: &Path, rate: u32, channels: u16) {
    let spec = hound::WavSpec { channels, sample_rate: rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for i in 0..100 * channels as i32 {
        w.write_sample(i as i16).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn wrong_rate_or_channels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("44k.wav");
    write_raw_wav(&p, 44_100, 1);
    assert!(matches!(read_wav(&p), Err(Error::ResampleRequired { found: 44_100, expected: 16_000, .. })));
    let p = dir.path().join("stereo.wav");
    write_raw_wav(&p, 16_000, 2);
    assert!(matches!(read_wav(&p), Err(Error::Wav { .. })));
    assert!(matches!(read_wav_from(&b"RIFFjunk"[..], Path::new("junk.wav")), Err(Error::Wav { .. })));
    assert!(matches!(read_wav(&dir.path().join("absent.wav")), Err(Error::Io { .. }) | Err(Error::Wav { .. })));
}

#[test]
fn vemb_round_trip_at_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.vemb");
    let mut rng = Rng::new(2);
    let data: Vec<f64> = (0..7 * 5).map(|_| rng.normal()).collect();
    let v = VisualEmbeddingSequence::new(7, 5, data, EmbeddingSource::StubEncoder).unwrap();
    write_vemb(&path, &v).unwrap();
    let back = read_vemb(&path).unwrap();
    assert_eq!((back.frames, back.dim), (7, 5));
    assert_eq!(back.source, EmbeddingSource::PrecomputedFile);
    for (a, b) in v.data.iter().zip(&back.data) {
        assert_eq!(*b, *a as f32 as f64);
    }
    assert_eq!(encode_vemb(&back), std::fs::read(&path).unwrap());
}

#[test]
fn vemb_damage_is_detected() {
    let v = VisualEmbeddingSequence::new(2, 3, vec![0.5; 6], EmbeddingSource::StubEncoder).unwrap();
    let bytes = encode_vemb(&v);
    let p = Path::new("e.vemb");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_vemb(&bad, p), Err(Error::CorruptFile { .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_vemb(&bad, p), Err(Error::VersionMismatch { found: 9, expected: 1, .. })));
    assert!(matches!(decode_vemb(&bytes[..bytes.len() - 1], p), Err(Error::CorruptFile { .. })));
    let mut zero = bytes[..16].to_vec();
    zero[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_vemb(&zero, p), Err(Error::CorruptFile { .. })));
}

fn sample_checkpoint() -> Checkpoint {
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let mut opt = AdamWState::default();
    opt.step = 3;
    for (name, t) in model.named_params() {
        let m: Vec<f64> = t.data().iter().map(|v| 0.1 * v).collect();
        opt.v.insert(name.clone(), m.iter().map(|v| v * v).collect());
        opt.m.insert(name, m);
    }
    Checkpoint::from_model(&model, 3, Some(&opt))
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ck = sample_checkpoint();
    save_checkpoint(&a, &ck).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, ck);
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // without optimizer state too
    let bare = Checkpoint { optimizer: None, ..ck };
    let bytes = encode_checkpoint(&bare).unwrap();
    assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes, &a).unwrap()).unwrap(), bytes);
}

#[test]
fn checkpoint_damage_is_detected() {
    let bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
    let p = Path::new("c.ckpt");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"MSVA");
    assert!(matches!(decode_checkpoint(&bad, p), Err(Error::CorruptFile { .. })));
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&bad, p), Err(Error::VersionMismatch { found: 2, expected: 1, .. })));
    let mut bad = bytes.clone();
    let mid = bytes.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(decode_checkpoint(&bad, p), Err(Error::CorruptFile { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 9], p), Err(Error::CorruptFile { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..3], p), Err(Error::CorruptFile { .. })));
}

#[test]
fn loaded_checkpoint_enhances_bitwise_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::new(ModelConfig { use_visual: false, ..ModelConfig::default() }).unwrap();
    let x = signal(3, 3000);
    let before = model.forward(&x, None).unwrap();
    save_checkpoint(&path, &Checkpoint::from_model(&model, 0, None)).unwrap();
    let after = load_checkpoint(&path).unwrap().into_model().unwrap().forward(&x, None).unwrap();
    assert_eq!(before, after);
}

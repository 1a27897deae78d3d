use avsm_core::data::{synthesize_sources, ToyCorpusConfig};
use avsm_core::dsp::AudioBuffer;
use avsm_core::metrics::{si_sdr, si_sdr_samples, stoi, stoi_samples, SI_SDR_CAP_DB};
use avsm_core::rng::Rng;
use avsm_core::Error;

const SR: u32 = 16_000;

fn buf(x: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(x, SR).unwrap()
}

fn speech(index: usize, secs: f64) -> Vec<f64> {
    let cfg = ToyCorpusConfig { duration_s: secs, ..Default::default() };
    synthesize_sources(&cfg, 77, index).unwrap().target
}

fn white(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.normal()).collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn add_at_snr(s: &[f64], n: &[f64], snr_db: f64) -> Vec<f64> {
    let g = (power(s) / (power(n) * 10f64.powf(snr_db / 10.0))).sqrt();
    s.iter().zip(n).map(|(a, b)| a + g * b).collect()
}

#[test]
fn stoi_of_a_signal_with_itself_is_one() {
    for i in 0..3 {
        let x = speech(i, 2.0);
        let d = stoi(&buf(x.clone()), &buf(x)).unwrap();
        assert!(d >= 0.999, "{d}");
    }
}

#[test]
fn stoi_against_independent_noise_is_low() {
    let x = speech(5, 2.0);
    let d = stoi(&buf(x.clone()), &buf(white(1, x.len()))).unwrap();
    assert!(d < 0.2, "{d}");
}

#[test]
fn stoi_increases_with_snr() {
    let x = speech(6, 3.0);
    let n = white(2, x.len());
    let scores: Vec<f64> =
        (0..10).map(|k| stoi(&buf(x.clone()), &buf(add_at_snr(&x, &n, -15.0 + 3.0 * k as f64))).unwrap()).collect();
    for w in scores.windows(2) {
        assert!(w[1] > w[0], "{scores:?}");
    }
}

#[test]
fn stoi_ignores_the_scale_of_the_processed_signal() {
    let x = speech(7, 2.0);
    let y = add_at_snr(&x, &white(3, x.len()), 0.0);
    let d = stoi(&buf(x.clone()), &buf(y.clone())).unwrap();
    for a in [0.1, 3.0] {
        let ys: Vec<f64> = y.iter().map(|v| a * v).collect();
        assert!((stoi(&buf(x.clone()), &buf(ys)).unwrap() - d).abs() < 1e-6);
    }
}

#[test]
fn stoi_rejects_mismatched_and_short_inputs() {
    assert!(matches!(stoi_samples(&[0.0; 100], &[0.0; 101], SR), Err(Error::LengthMismatch { .. })));
    let x = speech(8, 0.1);
    assert!(matches!(stoi_samples(&x, &x, SR), Err(Error::TooShort(_))));
}

#[test]
fn si_sdr_orthogonal_noise_is_exact() {
    let mut s = white(10, 8000);
    let m = s.iter().sum::<f64>() / s.len() as f64;
    s.iter_mut().for_each(|v| *v -= m);
    let mut n = white(11, 8000);
    let m = n.iter().sum::<f64>() / n.len() as f64;
    n.iter_mut().for_each(|v| *v -= m);
    let proj = n.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
    n.iter_mut().zip(&s).for_each(|(a, b)| *a -= proj * b);
    let g = (power(&s) / (10.0 * power(&n))).sqrt();
    let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    let d = si_sdr_samples(&s, &est).unwrap();
    assert!((d - 10.0).abs() < 1e-9, "{d}");
}

#[test]
fn si_sdr_is_capped_for_scaled_copies() {
    let s = speech(12, 0.5);
    for a in [1.0, 0.01, 7.5, -1.0, -3.0] {
        let e: Vec<f64> = s.iter().map(|v| a * v).collect();
        let d = si_sdr(&buf(s.clone()), &buf(e)).unwrap();
        assert!(d >= SI_SDR_CAP_DB, "alpha {a}: {d}");
    }
    // offsets are removed before scoring
    let e: Vec<f64> = s.iter().map(|v| 2.0 * v + 0.25).collect();
    assert!(si_sdr_samples(&s, &e).unwrap() >= SI_SDR_CAP_DB);
}

#[test]
fn si_sdr_errors() {
    assert!(matches!(si_sdr_samples(&[0.5; 10], &[1.0; 10]), Err(Error::ZeroReference)));
    assert!(matches!(si_sdr_samples(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    // an estimate with nothing of the reference in it hits the lower clamp
    assert_eq!(si_sdr_samples(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]).unwrap(), -SI_SDR_CAP_DB);
}

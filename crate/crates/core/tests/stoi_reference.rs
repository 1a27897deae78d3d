//! STOI against values produced by the pystoi reference implementation on
//! shared deterministic signals (regenerate with
//! `python3 tools/stoi_reference.py`).

use avsm_core::metrics::{resample_poly_kaiser, stoi_samples};

const TOL: f64 = 1e-3;

struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) * 2.0 - 1.0
    }
}

fn clean(n: usize, fs: f64, seed: u64) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut rng = SplitMix64(seed);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let mut env = (0.5 + 0.5 * (2.0 * PI * 3.1 * t).sin()).powi(2);
            if (1.0..1.3).contains(&t) {
                env = 0.0;
            }
            let harm: f64 = (1..13)
                .map(|h| (2.0 * PI * 140.0 * h as f64 * t + 0.7 * h as f64).sin() / h as f64)
                .sum();
            env * (harm + 0.05 * rng.uniform())
        })
        .collect()
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64(seed);
    (0..n).map(|_| rng.uniform()).collect()
}

fn mix(x: &[f64], v: &[f64], snr_db: f64) -> Vec<f64> {
    let px = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
    let pv = v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
    let g = (px / (pv * 10f64.powf(snr_db / 10.0))).sqrt();
    x.iter().zip(v).map(|(a, b)| a + g * b).collect()
}

fn assert_close(label: &str, got: f64, want: f64) {
    println!("{label}: got {got:.9}, reference {want:.9}");
    assert!((got - want).abs() < TOL, "{label}: {got} vs {want}");
}

#[test]
fn stoi_matches_reference_at_16k() {
    let n = 40_000;
    let x = clean(n, 16000.0, 7);
    let v = noise(n, 99);
    for (snr, want) in [(-5.0, 0.693896595), (0.0, 0.784224023), (5.0, 0.840215463)] {
        let got = stoi_samples(&x, &mix(&x, &v, snr), 16000).unwrap();
        assert_close(&format!("snr {snr:+}"), got, want);
    }
    assert_close("noise only", stoi_samples(&x, &v, 16000).unwrap(), 0.392476330);
}

#[test]
fn stoi_matches_reference_at_10k() {
    let n = 25_000;
    let x = clean(n, 10000.0, 7);
    let v = noise(n, 99);
    assert_close("10 kHz snr 0", stoi_samples(&x, &mix(&x, &v, 0.0), 10000).unwrap(), 0.752186522);
}

#[test]
fn resampler_matches_reference() {
    let x = clean(40_000, 16000.0, 7);
    let r = resample_poly_kaiser(&x, 10000, 16000);
    assert_eq!(r.len(), 25_000);
    for (i, want) in [
        (0, 2.583811349286e-01),
        (1, 3.384472756504e-01),
        (100, -9.298371725115e-03),
        (4321, -2.288868072856e-01),
        (12345, 0.0),
        (24999, 1.785564954370e-11),
    ] {
        assert!((r[i] - want).abs() < 1e-9, "resampled[{i}] = {} vs {want}", r[i]);
    }
}

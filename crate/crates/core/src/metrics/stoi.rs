//! Short-time objective intelligibility, following the widely used
//! reference implementation step for step: Kaiser-windowed polyphase
//! resampling to 10 kHz, 40 dB silent-frame removal, 512-point STFT of
//! 256-sample Hann frames, 15 one-third-octave bands from 150 Hz, 30-frame
//! segments with clipping at -15 dB SDR.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::fft::{rfft, FftPlan};
use crate::math::{bessel_i0, ceil, cos, log10, powf, sin, sqrt, PI};

pub const STOI_FS: u32 = 10000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const N_SEG: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE: f64 = 40.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        sin(PI * x) / (PI * x)
    }
}

/// Kaiser-windowed sinc lowpass (60 dB rejection) normalized to unit sum.
fn resample_filter(up: u64, down: u64) -> Vec<f64> {
    let stop = 1.0 / (2.0 * up.max(down) as f64);
    let roll_off = stop / 10.0;
    let rejection_db = 60.0;
    let l = ceil((rejection_db - 8.0) / (28.714 * roll_off)) as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = (2 * l + 1) as f64;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (-l..=l)
        .enumerate()
        .map(|(n, t)| {
            let r = 2.0 * n as f64 / (m - 1.0) - 1.0;
            let kaiser = bessel_i0(beta * sqrt((1.0 - r * r).max(0.0))) / i0b;
            kaiser * 2.0 * up as f64 * stop * sinc(2.0 * stop * t as f64)
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Rational resampling by `up/down` with the filter above, output length
/// `ceil(len·up/down)`, aligned so output sample `m` sits at input time
/// `m·down/up`.
pub fn resample_poly_kaiser(x: &[f64], up: u64, down: u64) -> Vec<f64> {
    let g = gcd(up, down).max(1);
    let (up, down) = (up / g, down / g);
    if up == down {
        return x.to_vec();
    }
    let h = resample_filter(up, down);
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() as u64 * up).div_ceil(down) as usize;
    let (up, down) = (up as usize, down as usize);
    let mut y = vec![0.0; n_out];
    for (m, out) in y.iter_mut().enumerate() {
        // h index = half + m·down - i·up must lie in [0, len)
        let center = half + m * down;
        let i_min = (center + 1).saturating_sub(h.len()).div_ceil(up);
        let i_max = (center / up).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        if i_min <= i_max && !x.is_empty() {
            for i in i_min..=i_max {
                acc += x[i] * h[center - i * up];
            }
        }
        *out = up as f64 * acc;
    }
    y
}

/// Symmetric Hann of length `n` without its zero endpoints.
fn hanning_inner(n: usize) -> Vec<f64> {
    let m = (n + 2) as f64;
    (1..=n).map(|k| 0.5 - 0.5 * cos(2.0 * PI * k as f64 / (m - 1.0))).collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(N_FRAME)).step_by(N_FRAME / 2)
}

fn overlap_add(frames: &[Vec<f64>], hop: usize) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let len = (frames.len() - 1) * hop + frames[0].len();
    let mut out = vec![0.0; len];
    for (k, f) in frames.iter().enumerate() {
        for (j, v) in f.iter().enumerate() {
            out[k * hop + j] += v;
        }
    }
    out
}

/// Drops frames of `x` more than 40 dB below its loudest frame (and the
/// same frames of `y`), re-assembling both by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hanning_inner(N_FRAME);
    let mut xf = Vec::new();
    let mut yf = Vec::new();
    let mut energies = Vec::new();
    for s in frame_starts(x.len()) {
        let a: Vec<f64> = (0..N_FRAME).map(|j| w[j] * x[s + j]).collect();
        let b: Vec<f64> = (0..N_FRAME).map(|j| w[j] * y[s + j]).collect();
        let norm = sqrt(a.iter().map(|v| v * v).sum());
        energies.push(20.0 * log10(norm + f64::EPSILON));
        xf.push(a);
        yf.push(b);
    }
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<bool> = energies.iter().map(|e| max - DYN_RANGE - e < 0.0).collect();
    let pick = |frames: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        frames.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(f, _)| f).collect()
    };
    (overlap_add(&pick(xf), N_FRAME / 2), overlap_add(&pick(yf), N_FRAME / 2))
}

/// Power spectra `|X|²` of Hann frames, `frames × (NFFT/2 + 1)`.
fn power_frames(x: &[f64], plan: &FftPlan) -> Vec<Vec<f64>> {
    let w = hanning_inner(N_FRAME);
    let mut buf = Vec::new();
    let mut spec = vec![Complex64::new(0.0, 0.0); NFFT / 2 + 1];
    frame_starts(x.len())
        .map(|s| {
            let frame: Vec<f64> = (0..N_FRAME).map(|j| w[j] * x[s + j]).collect();
            rfft(plan, &frame, &mut buf, &mut spec);
            spec.iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Band edges `[lo, hi)` in FFT bins for the one-third-octave bands.
pub fn third_octave_bands(fs: u32, nfft: usize, num_bands: usize, min_freq: f64) -> Vec<(usize, usize)> {
    let bins = nfft / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|k| k as f64 * fs as f64 / nfft as f64).collect();
    let nearest = |target: f64| -> usize {
        let mut best = 0;
        for (i, v) in f.iter().enumerate() {
            if (v - target) * (v - target) < (f[best] - target) * (f[best] - target) {
                best = i;
            }
        }
        best
    };
    (0..num_bands)
        .map(|k| {
            let k = k as f64;
            let lo = min_freq * powf(2.0, (2.0 * k - 1.0) / 6.0);
            let hi = min_freq * powf(2.0, (2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

pub fn stoi(clean: &AudioBuffer, processed: &AudioBuffer) -> Result<f64> {
    if clean.sample_rate != processed.sample_rate {
        return Err(Error::config("clean and processed sample rates differ"));
    }
    stoi_samples(&clean.samples, &processed.samples, clean.sample_rate)
}

pub fn stoi_samples(clean: &[f64], processed: &[f64], fs: u32) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: processed.len() });
    }
    if fs == 0 {
        return Err(Error::config("sample rate must be positive"));
    }
    let (x, y) = if fs == STOI_FS {
        (clean.to_vec(), processed.to_vec())
    } else {
        (
            resample_poly_kaiser(clean, STOI_FS as u64, fs as u64),
            resample_poly_kaiser(processed, STOI_FS as u64, fs as u64),
        )
    };
    if x.len() <= N_FRAME {
        return Err(Error::TooShort(alloc::format!("{} samples at 10 kHz", x.len())));
    }
    let (x, y) = remove_silent_frames(&x, &y);

    let plan = FftPlan::new(NFFT);
    let xp = power_frames(&x, &plan);
    let yp = power_frames(&y, &plan);
    let frames = xp.len();
    if frames < N_SEG {
        return Err(Error::TooShort(alloc::format!(
            "{frames} frames after silence removal, need {N_SEG}"
        )));
    }
    let bands = third_octave_bands(STOI_FS, NFFT, NUM_BANDS, MIN_FREQ);
    let tob = |p: &[Vec<f64>]| -> Vec<Vec<f64>> {
        bands
            .iter()
            .map(|&(lo, hi)| p.iter().map(|fr| sqrt(fr[lo..hi].iter().sum())).collect())
            .collect()
    };
    let xt = tob(&xp);
    let yt = tob(&yp);

    let clip = 1.0 + powf(10.0, -BETA_DB / 20.0);
    let eps = f64::EPSILON;
    let norm = |v: &[f64]| sqrt(v.iter().map(|a| a * a).sum());
    let mut total = 0.0;
    let segments = frames - N_SEG + 1;
    let mut xs = vec![0.0; N_SEG];
    let mut ys = vec![0.0; N_SEG];
    for m in N_SEG..=frames {
        for b in 0..NUM_BANDS {
            xs.copy_from_slice(&xt[b][m - N_SEG..m]);
            let yseg = &yt[b][m - N_SEG..m];
            let alpha = norm(&xs) / (norm(yseg) + eps);
            for j in 0..N_SEG {
                ys[j] = (yseg[j] * alpha).min(xs[j] * clip);
            }
            let my = ys.iter().sum::<f64>() / N_SEG as f64;
            let mx = xs.iter().sum::<f64>() / N_SEG as f64;
            ys.iter_mut().for_each(|v| *v -= my);
            xs.iter_mut().for_each(|v| *v -= mx);
            let ny = norm(&ys) + eps;
            let nx = norm(&xs) + eps;
            total += (0..N_SEG).map(|j| (ys[j] / ny) * (xs[j] / nx)).sum::<f64>();
        }
    }
    Ok(total / (segments * NUM_BANDS) as f64)
}

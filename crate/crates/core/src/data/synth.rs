//! Deterministic "speech-like" toy material: formant-filtered voiced and
//! unvoiced excitation with syllabic amplitude modulation for targets,
//! amplitude-modulated harmonic tones for interferers, colored noise, and a
//! tiny mouth-opening video driven by the target envelope.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mixer::{Placement, PlacementMode};
use crate::error::{Error, Result};
use crate::math::{cos, exp, powf, sin, sqrt, PI, TAU};
use crate::model::VideoFrames;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub video_fps: u32,
    /// Video frames are `video_size × video_size`, one channel.
    pub video_size: usize,
    pub visual_dim: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            sample_rate: 16000,
            duration_s: 1.0,
            snr_min_db: -10.0,
            snr_max_db: 10.0,
            video_fps: 25,
            video_size: 8,
            visual_dim: 64,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.video_fps == 0 || self.video_size == 0 || self.visual_dim == 0 {
            return Err(Error::config("rates, video size and visual_dim must be positive"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::config("duration_s must be positive"));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::config("snr_min_db must not exceed snr_max_db"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        crate::math::round(self.duration_s * self.sample_rate as f64) as usize
    }
}

/// Raw material for one toy scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySources {
    pub target: Vec<f64>,
    pub interferer: Vec<f64>,
    pub noise: Vec<f64>,
    /// Syllabic envelope of the target, one value per sample.
    pub envelope: Vec<f64>,
    pub video: VideoFrames,
    pub snr_interferer_db: f64,
    pub snr_noise_db: f64,
    pub interferer_placement: Placement,
    pub noise_placement: Placement,
}

/// Two-pole resonator with unit peak gain.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, sr: f64) -> Self {
        let r = exp(-PI * bandwidth / sr);
        Resonator { a1: 2.0 * r * cos(TAU * freq / sr), a2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn retune(&mut self, freq: f64, bandwidth: f64, sr: f64) {
        let r = exp(-PI * bandwidth / sr);
        self.a1 = 2.0 * r * cos(TAU * freq / sr);
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Returns `(signal, envelope)`.
fn speech_like(n: usize, sr: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; n];
    let mut env = vec![0.0; n];
    let f0_base = rng.uniform(100.0, 200.0);
    let vibrato_rate = rng.uniform(3.0, 6.0);
    let mut formants = [
        Resonator::new(500.0, 90.0, sr),
        Resonator::new(1500.0, 120.0, sr),
        Resonator::new(2500.0, 160.0, sr),
    ];
    let mut phase = 0.0;
    let mut i = 0;
    while i < n {
        let pause = rng.chance(0.2);
        let len = if pause {
            (rng.uniform(0.04, 0.12) * sr) as usize
        } else {
            (rng.uniform(0.12, 0.28) * sr) as usize
        }
        .max(1);
        let voiced = rng.chance(0.8);
        let f = [rng.uniform(300.0, 850.0), rng.uniform(900.0, 2200.0), rng.uniform(2300.0, 3200.0)];
        for (r, fr) in formants.iter_mut().zip(f) {
            r.retune(fr, rng.uniform(70.0, 160.0), sr);
        }
        let level = rng.uniform(0.5, 1.0);
        for k in 0..len.min(n - i) {
            let t = (i + k) as f64 / sr;
            let e = if pause { 0.0 } else { level * powf(sin(PI * (k as f64 + 0.5) / len as f64), 0.6) };
            let f0 = f0_base * (1.0 + 0.04 * sin(TAU * vibrato_rate * t));
            phase += f0 / sr;
            phase -= (phase as i64) as f64;
            let excitation = if voiced {
                (2.0 * phase - 1.0) + 0.05 * rng.normal()
            } else {
                0.6 * rng.normal()
            };
            let y: f64 = formants.iter_mut().map(|r| r.step(excitation)).sum();
            out[i + k] = e * y;
            env[i + k] = e;
        }
        i += len;
    }
    normalize_peak(&mut out, 0.5);
    (out, env)
}

fn tonal(n: usize, sr: f64, rng: &mut Rng) -> Vec<f64> {
    let f0 = rng.uniform(150.0, 320.0);
    let am_rate = rng.uniform(2.0, 6.0);
    let vib = rng.uniform(0.5, 2.0);
    let phases: Vec<f64> = (0..6).map(|_| rng.uniform(0.0, TAU)).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let am = 0.55 + 0.45 * sin(TAU * am_rate * t + phases[0]);
            let ft = f0 * t + 3.0 * sin(TAU * vib * t) / (TAU * vib);
            let s: f64 = (1..=6)
                .map(|h| sin(TAU * h as f64 * ft + phases[h - 1]) / h as f64)
                .sum();
            am * s
        })
        .collect();
    normalize_peak(&mut out, 0.5);
    out
}

fn colored_noise(n: usize, rng: &mut Rng) -> Vec<f64> {
    let a = rng.uniform(0.3, 0.97);
    let white_mix = rng.uniform(0.0, 0.5);
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w = rng.normal();
            y = a * y + (1.0 - a) * w;
            y + white_mix * (1.0 - a) * w
        })
        .collect();
    let rms = sqrt(out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64);
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    }
    out
}

/// `size × size` mouth image per video frame: an ellipse whose vertical
/// opening follows the target envelope, over a faint fixed texture.
fn mouth_video(envelope: &[f64], sr: u32, fps: u32, size: usize, rng: &mut Rng) -> VideoFrames {
    let n = envelope.len();
    let frames = ((n as u64 * fps as u64).div_ceil(sr as u64)).max(1) as usize;
    let texture: Vec<f64> = (0..size * size).map(|_| 0.05 * rng.uniform(0.0, 1.0)).collect();
    let half_window = (sr / fps / 2) as usize;
    let c = (size as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(frames * size * size);
    for v in 0..frames {
        let center = ((v as u64 * sr as u64) / fps as u64) as usize;
        let lo = center.saturating_sub(half_window).min(n.saturating_sub(1));
        let hi = (center + half_window).min(n).max(lo + 1);
        let open = envelope[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        let ry = 0.5 + open * c;
        let rx = 0.8 * c;
        for i in 0..size {
            for j in 0..size {
                let (dy, dx) = ((i as f64 - c) / ry, (j as f64 - c) / rx);
                let inside = if dy * dy + dx * dx <= 1.0 { 1.0 } else { 0.0 };
                data.push(inside * open + texture[i * size + j]);
            }
        }
    }
    VideoFrames::new(frames, size, size, 1, data).expect("sized")
}

/// Deterministic sources for scene `index` of a corpus seeded with `seed`.
pub fn synthesize_sources(cfg: &ToyCorpusConfig, seed: u64, index: usize) -> Result<ToySources> {
    cfg.validate()?;
    let n = cfg.num_samples();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let sr = cfg.sample_rate as f64;
    let mut rng = Rng::stream(seed, &alloc::format!("toy-scene-{index}"));
    let (target, envelope) = speech_like(n, sr, &mut rng);
    let interferer = tonal(n + n / 3, sr, &mut rng);
    let noise = colored_noise(n / 2 + 1, &mut rng);
    let snr_interferer_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    let snr_noise_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    let interferer_placement = Placement { start: rng.below(n / 4 + 1), mode: PlacementMode::Truncate };
    let noise_placement = Placement { start: 0, mode: PlacementMode::Loop };
    let video = mouth_video(&envelope, cfg.sample_rate, cfg.video_fps, cfg.video_size, &mut rng);
    Ok(ToySources {
        target,
        interferer,
        noise,
        envelope,
        video,
        snr_interferer_db,
        snr_noise_db,
        interferer_placement,
        noise_placement,
    })
}

//! STFT analysis and overlap-add synthesis, magnitude/phase views and
//! power-law magnitude compression.
//!
//! Frames are `win_len` samples long, windowed, zero-padded to `n_fft` and
//! transformed; only the `n_fft/2 + 1` non-negative bins are kept. With
//! center padding the signal is reflect-padded by `win_len/2` on both sides
//! so frame `t` is centered on sample `t·hop`.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftPlan;
use crate::math::{atan2, cos, powf, sqrt, PI, TAU};

/// Relative tolerance used by [`verify_cola`].
pub const COLA_TOLERANCE: f64 = 1e-8;

/// Added to `|z|²` before power-law compression in the training losses so
/// gradients stay finite as a bin's magnitude goes to zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Overlap-add normalization below this value is treated as "not covered".
const SYNTHESIS_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Square-root periodic Hann for both analysis and synthesis.
    HannSqrt,
    /// Periodic Hann analysis, flat synthesis.
    Hann,
    /// Flat analysis and synthesis.
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_len: usize,
    pub window: WindowKind,
    pub center_pad: bool,
    pub compression_exponent: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 400,
            hop: 100,
            win_len: 400,
            window: WindowKind::HannSqrt,
            center_pad: true,
            compression_exponent: 0.3,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::config("stft.hop must be positive"));
        }
        if !(self.hop <= self.win_len && self.win_len <= self.n_fft) {
            return Err(Error::config("stft requires hop <= win_len <= n_fft"));
        }
        let c = self.compression_exponent;
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::config("stft.compression_exponent must lie in (0, 1]"));
        }
        if !verify_cola(self) {
            return Err(Error::config("stft window/hop pair violates constant overlap-add"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Samples of padding added to each side.
    pub fn pad(&self) -> usize {
        if self.center_pad {
            self.win_len / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded < self.win_len {
            1
        } else {
            1 + (padded - self.win_len) / self.hop
        }
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::HannSqrt => hann(self.win_len).into_iter().map(sqrt).collect(),
            WindowKind::Hann => hann(self.win_len),
            WindowKind::Rectangular => vec![1.0; self.win_len],
        }
    }

    pub fn synthesis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::HannSqrt => hann(self.win_len).into_iter().map(sqrt).collect(),
            WindowKind::Hann | WindowKind::Rectangular => vec![1.0; self.win_len],
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * cos(TAU * i as f64 / n as f64))
        .collect()
}

/// True iff the product of synthesis and analysis windows overlap-adds to
/// a constant at the configured hop.
pub fn verify_cola(cfg: &StftConfig) -> bool {
    if cfg.hop == 0 || cfg.win_len == 0 || cfg.hop > cfg.win_len {
        return false;
    }
    let wa = cfg.analysis_window();
    let ws = cfg.synthesis_window();
    let mut sums = vec![0.0; cfg.hop];
    for (j, (a, s)) in wa.iter().zip(&ws).enumerate() {
        sums[j % cfg.hop] += a * s;
    }
    let max = sums.iter().cloned().fold(f64::MIN, f64::max);
    let min = sums.iter().cloned().fold(f64::MAX, f64::min);
    max > 0.0 && (max - min) <= COLA_TOLERANCE * max
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(alloc::format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Complex time-frequency grid, row-major `frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Spectrogram {
            frames,
            bins,
            real: vec![0.0; frames * bins],
            imag: vec![0.0; frames * bins],
        }
    }

    pub fn from_polar(frames: usize, bins: usize, magnitude: &[f64], phase: &[f64]) -> Result<Self> {
        if magnitude.len() != frames * bins || phase.len() != frames * bins {
            return Err(Error::shape("polar grids must be frames × bins"));
        }
        Ok(Spectrogram {
            frames,
            bins,
            real: magnitude.iter().zip(phase).map(|(m, p)| m * cos(*p)).collect(),
            imag: magnitude
                .iter()
                .zip(phase)
                .map(|(m, p)| m * crate::math::sin(*p))
                .collect(),
        })
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(r, i)| sqrt(r * r + i * i))
            .collect()
    }

    /// Phase in `(-π, π]`.
    pub fn phase(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(&r, &i)| {
                let p = atan2(i, r);
                if p <= -PI {
                    PI
                } else {
                    p
                }
            })
            .collect()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Spectrogram {
            frames: self.frames,
            bins: self.bins,
            real: self.real.iter().map(|v| v * alpha).collect(),
            imag: self.imag.iter().map(|v| v * alpha).collect(),
        }
    }
}

/// Precomputed windows and FFT plan for one [`StftConfig`].
#[derive(Clone, Debug)]
pub struct StftPlan {
    cfg: StftConfig,
    fft: FftPlan,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
}

impl StftPlan {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(StftPlan {
            cfg: cfg.clone(),
            fft: FftPlan::new(cfg.n_fft),
            analysis: cfg.analysis_window(),
            synthesis: cfg.synthesis_window(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn padded_index(&self, j: usize, len: usize) -> usize {
        reflect_index(j as i64 - self.cfg.pad() as i64, len)
    }

    /// Forward transform of raw samples; returns `(frames, real, imag)`.
    pub fn analyze(&self, x: &[f64]) -> (usize, Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let (n, bins) = (cfg.n_fft, cfg.bins());
        let frames = cfg.num_frames(x.len());
        let mut re = vec![0.0; frames * bins];
        let mut im = vec![0.0; frames * bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        let padded_len = x.len() + 2 * cfg.pad();
        for t in 0..frames {
            for c in buf.iter_mut() {
                *c = Complex64::new(0.0, 0.0);
            }
            for (k, w) in self.analysis.iter().enumerate() {
                let j = t * cfg.hop + k;
                if j < padded_len {
                    buf[k].re = w * x[self.padded_index(j, x.len())];
                }
            }
            self.fft.forward(&buf, &mut spec);
            for f in 0..bins {
                re[t * bins + f] = spec[f].re;
                im[t * bins + f] = spec[f].im;
            }
        }
        (frames, re, im)
    }

    /// Adjoint of [`StftPlan::analyze`]: maps gradients on `(real, imag)`
    /// back to the `len` input samples.
    pub fn analyze_adjoint(&self, len: usize, g_re: &[f64], g_im: &[f64]) -> Vec<f64> {
        let cfg = &self.cfg;
        let (n, bins) = (cfg.n_fft, cfg.bins());
        let frames = g_re.len() / bins;
        let padded_len = len + 2 * cfg.pad();
        let mut gx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut time = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            for c in buf.iter_mut() {
                *c = Complex64::new(0.0, 0.0);
            }
            for f in 0..bins {
                buf[f] = Complex64::new(g_re[t * bins + f], g_im[t * bins + f]);
            }
            self.fft.inverse(&buf, &mut time);
            for (k, w) in self.analysis.iter().enumerate() {
                let j = t * cfg.hop + k;
                if j < padded_len {
                    gx[self.padded_index(j, len)] += w * time[k].re;
                }
            }
        }
        gx
    }

    /// Overlap-add normalization over the padded domain.
    fn ola_norm(&self, frames: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let total = (frames - 1) * cfg.hop + cfg.win_len;
        let mut norm = vec![0.0; total];
        for t in 0..frames {
            for k in 0..cfg.win_len {
                norm[t * cfg.hop + k] += self.analysis[k] * self.synthesis[k];
            }
        }
        norm
    }

    /// Inverse transform: real inverse FFT per frame, synthesis window,
    /// overlap-add, normalization, then exactly `out_len` samples.
    pub fn synthesize(&self, frames: usize, re: &[f64], im: &[f64], out_len: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let (n, bins) = (cfg.n_fft, cfg.bins());
        if frames == 0 {
            return vec![0.0; out_len];
        }
        let norm = self.ola_norm(frames);
        let mut acc = vec![0.0; norm.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut time = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            self.hermitian_fill(&re[t * bins..(t + 1) * bins], &im[t * bins..(t + 1) * bins], &mut buf);
            self.fft.inverse(&buf, &mut time);
            for k in 0..cfg.win_len {
                acc[t * cfg.hop + k] += self.synthesis[k] * time[k].re / n as f64;
            }
        }
        let pad = cfg.pad();
        (0..out_len)
            .map(|i| {
                let j = i + pad;
                if j < acc.len() && norm[j] > SYNTHESIS_FLOOR {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Adjoint of [`StftPlan::synthesize`].
    pub fn synthesize_adjoint(&self, frames: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let (n, bins) = (cfg.n_fft, cfg.bins());
        let mut g_re = vec![0.0; frames * bins];
        let mut g_im = vec![0.0; frames * bins];
        if frames == 0 {
            return (g_re, g_im);
        }
        let norm = self.ola_norm(frames);
        let pad = cfg.pad();
        let mut g_acc = vec![0.0; norm.len()];
        for (i, gi) in g.iter().enumerate() {
            let j = i + pad;
            if j < norm.len() && norm[j] > SYNTHESIS_FLOOR {
                g_acc[j] = gi / norm[j];
            }
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        let even = n % 2 == 0;
        for t in 0..frames {
            for c in buf.iter_mut() {
                *c = Complex64::new(0.0, 0.0);
            }
            for k in 0..cfg.win_len {
                buf[k].re = self.synthesis[k] * g_acc[t * cfg.hop + k] / n as f64;
            }
            self.fft.forward(&buf, &mut spec);
            for f in 0..bins {
                let edge = f == 0 || (even && f == n / 2);
                let w = if edge { 1.0 } else { 2.0 };
                g_re[t * bins + f] = w * spec[f].re;
                g_im[t * bins + f] = if edge { 0.0 } else { w * spec[f].im };
            }
        }
        (g_re, g_im)
    }

    fn hermitian_fill(&self, re: &[f64], im: &[f64], buf: &mut [Complex64]) {
        let n = self.cfg.n_fft;
        let bins = re.len();
        for f in 0..bins {
            buf[f] = Complex64::new(re[f], im[f]);
        }
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
    }
}

/// Mirror an index into `0..len` with repeated reflection (no edge repeat).
fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as i64 {
        r = period - r;
    }
    r as usize
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    if audio.is_empty() {
        return Err(Error::EmptyInput);
    }
    let plan = StftPlan::new(cfg)?;
    let (frames, real, imag) = plan.analyze(&audio.samples);
    Ok(Spectrogram { frames, bins: cfg.bins(), real, imag })
}

pub fn istft(spec: &Spectrogram, cfg: &StftConfig, out_len: usize, sample_rate: u32) -> Result<AudioBuffer> {
    let plan = StftPlan::new(cfg)?;
    if spec.bins != cfg.bins() {
        return Err(Error::config(alloc::format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins,
            cfg.bins()
        )));
    }
    if spec.real.len() != spec.frames * spec.bins || spec.imag.len() != spec.real.len() {
        return Err(Error::config("spectrogram grid size does not match frames × bins"));
    }
    let samples = plan.synthesize(spec.frames, &spec.real, &spec.imag, out_len);
    AudioBuffer::new(samples, sample_rate)
}

/// Elementwise `mag^c`.
pub fn compress_magnitude(mag: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::config("compression exponent must lie in (0, 1]"));
    }
    mag.iter()
        .map(|&m| {
            if m < 0.0 {
                Err(Error::domain("negative magnitude"))
            } else {
                Ok(powf(m, c))
            }
        })
        .collect()
}

/// Inverse of [`compress_magnitude`].
pub fn decompress_magnitude(mag: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::config("compression exponent must lie in (0, 1]"));
    }
    mag.iter()
        .map(|&m| {
            if m < 0.0 {
                Err(Error::domain("negative magnitude"))
            } else {
                Ok(powf(m, 1.0 / c))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn default_config_is_valid() {
        StftConfig::default().validate().unwrap();
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_frames(102_400), 1025);
        assert_eq!(cfg.num_frames(16_000), 161);
        assert_eq!(cfg.num_frames(1), 1);
    }

    #[test]
    fn empty_audio_rejected() {
        let a = AudioBuffer { samples: vec![], sample_rate: 16_000 };
        assert_eq!(stft(&a, &StftConfig::default()), Err(Error::EmptyInput));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = StftConfig { hop: 300, ..StftConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = StftConfig { win_len: 500, ..StftConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = StftConfig { compression_exponent: 0.0, ..StftConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let a = AudioBuffer::new(vec![0.0; 16_000], 16_000).unwrap();
        let s = stft(&a, &StftConfig::default()).unwrap();
        assert_eq!((s.frames, s.bins), (161, 201));
        assert!(s.real.iter().chain(&s.imag).all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_short_and_odd_lengths() {
        let cfg = StftConfig::default();
        for &len in &[1usize, 2, 3, 150, 399, 401, 1600] {
            let x = noise(len, len as u64);
            let a = AudioBuffer::new(x.clone(), 16_000).unwrap();
            let s = stft(&a, &cfg).unwrap();
            let y = istft(&s, &cfg, len, 16_000).unwrap();
            assert_eq!(y.len(), len);
            for (u, v) in x.iter().zip(&y.samples) {
                assert!((u - v).abs() < 1e-9, "len {len}");
            }
        }
    }

    #[test]
    fn istft_output_length_is_exact() {
        let cfg = StftConfig::default();
        let a = AudioBuffer::new(noise(1000, 1), 16_000).unwrap();
        let s = stft(&a, &cfg).unwrap();
        assert_eq!(istft(&s, &cfg, 10, 16_000).unwrap().len(), 10);
        let long = istft(&s, &cfg, 5000, 16_000).unwrap();
        assert_eq!(long.len(), 5000);
        assert!(long.samples[4000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_rejects_wrong_bins() {
        let spec = Spectrogram::zeros(3, 10);
        assert!(matches!(
            istft(&spec, &StftConfig::default(), 100, 16_000),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn compression_examples() {
        assert_eq!(compress_magnitude(&[4.0], 0.5).unwrap(), vec![2.0]);
        assert_eq!(compress_magnitude(&[0.0], 0.3).unwrap(), vec![0.0]);
        assert_eq!(compress_magnitude(&[0.7, 3.0], 1.0).unwrap(), vec![0.7, 3.0]);
        assert!(matches!(compress_magnitude(&[-1.0], 0.3), Err(Error::Domain(_))));
        let m = [1e-6, 0.3, 1.0, 25.0];
        let back = decompress_magnitude(&compress_magnitude(&m, 0.3).unwrap(), 0.3).unwrap();
        for (a, b) in m.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn phase_range_and_magnitude_sign() {
        let a = AudioBuffer::new(noise(4000, 9), 16_000).unwrap();
        let s = stft(&a, &StftConfig::default()).unwrap();
        assert!(s.phase().iter().all(|&p| p > -PI && p <= PI));
        assert!(s.magnitude().iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn analyze_adjoint_is_transpose() {
        // <A x, g> == <x, A^T g> for random x and g.
        let cfg = StftConfig { n_fft: 64, hop: 16, win_len: 64, ..StftConfig::default() };
        let plan = StftPlan::new(&cfg).unwrap();
        let x = noise(300, 4);
        let (frames, re, im) = plan.analyze(&x);
        let g_re = noise(frames * cfg.bins(), 5);
        let g_im = noise(frames * cfg.bins(), 6);
        let lhs: f64 = re.iter().zip(&g_re).chain(im.iter().zip(&g_im)).map(|(a, b)| a * b).sum();
        let gx = plan.analyze_adjoint(x.len(), &g_re, &g_im);
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn synthesize_adjoint_is_transpose() {
        let cfg = StftConfig { n_fft: 64, hop: 16, win_len: 64, ..StftConfig::default() };
        let plan = StftPlan::new(&cfg).unwrap();
        let frames = 20;
        let re = noise(frames * cfg.bins(), 7);
        let im = noise(frames * cfg.bins(), 8);
        let y = plan.synthesize(frames, &re, &im, 290);
        let g = noise(290, 10);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let (g_re, g_im) = plan.synthesize_adjoint(frames, &g);
        let rhs: f64 = re.iter().zip(&g_re).chain(im.iter().zip(&g_im)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn reflect_index_bounces() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(-5, 5), 3);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-7, 1), 0);
    }
}

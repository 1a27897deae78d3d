//! Composite training objective: waveform L1, compressed-magnitude MSE,
//! compressed-complex MSE, anti-wrapped phase terms and STFT consistency.
//!
//! Spectrogram arguments on the tape are `[2, T, F]` (real, imaginary).

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{AudioBuffer, Spectrogram, StftConfig, StftPlan, MAGNITUDE_FLOOR};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLoss {
    /// Instantaneous, time-difference and frequency-difference terms, each
    /// through the anti-wrapping distance.
    #[default]
    AntiWrapped,
    /// `mean(1 - cos(φ̂ - φ))`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_time: f64,
    pub w_mag: f64,
    pub w_complex: f64,
    pub w_phase: f64,
    pub w_consistency: f64,
    pub phase_loss: PhaseLoss,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_time: 0.2,
            w_mag: 0.9,
            w_complex: 0.1,
            w_phase: 0.3,
            w_consistency: 0.1,
            phase_loss: PhaseLoss::AntiWrapped,
        }
    }
}

impl LossWeights {
    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("w_time", self.w_time),
            ("w_mag", self.w_mag),
            ("w_complex", self.w_complex),
            ("w_phase", self.w_phase),
            ("w_consistency", self.w_consistency),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.named();
        if let Some((name, v)) = w.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
        }
        if w.iter().all(|(_, v)| *v == 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Values of every term and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub time: f64,
    pub magnitude: f64,
    pub complex: f64,
    pub phase: f64,
    pub consistency: f64,
    pub total: f64,
}

// ---- tape terms ------------------------------------------------------

fn same_shape(tape: &Tape, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

fn spec_shape(tape: &Tape, s: Var) -> Result<(usize, usize)> {
    match *tape.shape(s) {
        [2, t, f] => Ok((t, f)),
        ref other => Err(Error::shape(format!("spectrogram must be [2, T, F], got {other:?}"))),
    }
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.square(d)?;
    tape.mean(d)
}

/// `mean |ŷ - y|`.
pub fn time_tape(tape: &mut Tape, yhat: Var, y: Var) -> Result<Var> {
    let (a, b) = (tape.shape(yhat), tape.shape(y));
    if a != b {
        return Err(Error::LengthMismatch { left: a.iter().product(), right: b.iter().product() });
    }
    let d = tape.sub(yhat, y)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

/// `|z|^c` per bin, `[T, F]`, computed as `(re² + im² + ε)^(c/2)` with
/// ε = [`MAGNITUDE_FLOOR`] so the gradient stays bounded near zero.
pub fn compressed_magnitude_tape(tape: &mut Tape, s: Var, c: f64) -> Result<Var> {
    let (t, f) = spec_shape(tape, s)?;
    let re = tape.slice(s, 0, 0, 1)?;
    let im = tape.slice(s, 0, 1, 1)?;
    let re2 = tape.square(re)?;
    let im2 = tape.square(im)?;
    let p = tape.add(re2, im2)?;
    let p = tape.add_scalar(p, MAGNITUDE_FLOOR)?;
    let m = tape.pow(p, c / 2.0)?;
    tape.reshape(m, &[t, f])
}

/// Phase per bin, `[T, F]`.
pub fn phase_tape(tape: &mut Tape, s: Var) -> Result<Var> {
    let (t, f) = spec_shape(tape, s)?;
    let re = tape.slice(s, 0, 0, 1)?;
    let im = tape.slice(s, 0, 1, 1)?;
    let p = tape.atan2(im, re)?;
    tape.reshape(p, &[t, f])
}

pub fn magnitude_tape(tape: &mut Tape, shat: Var, s: Var, c: f64) -> Result<Var> {
    same_shape(tape, shat, s)?;
    let a = compressed_magnitude_tape(tape, shat, c)?;
    let b = compressed_magnitude_tape(tape, s, c)?;
    mse(tape, a, b)
}

pub fn complex_tape(tape: &mut Tape, shat: Var, s: Var, c: f64) -> Result<Var> {
    same_shape(tape, shat, s)?;
    spec_shape(tape, s)?;
    let a = tape.compress_complex(shat, c)?;
    let b = tape.compress_complex(s, c)?;
    mse(tape, a, b)
}

fn diff(tape: &mut Tape, x: Var, axis: usize) -> Result<Option<Var>> {
    let n = tape.shape(x)[axis];
    if n < 2 {
        return Ok(None);
    }
    let hi = tape.slice(x, axis, 1, n - 1)?;
    let lo = tape.slice(x, axis, 0, n - 1)?;
    Ok(Some(tape.sub(hi, lo)?))
}

/// Phase loss between two `[T, F]` phase grids.
pub fn phase_grid_tape(tape: &mut Tape, phat: Var, p: Var, kind: PhaseLoss) -> Result<Var> {
    same_shape(tape, phat, p)?;
    if tape.shape(p).len() != 2 {
        return Err(Error::shape("phase grids must be [T, F]"));
    }
    let d = tape.sub(phat, p)?;
    match kind {
        PhaseLoss::Cosine => {
            let c = tape.cos(d)?;
            let c = tape.neg(c)?;
            let c = tape.add_scalar(c, 1.0)?;
            tape.mean(c)
        }
        PhaseLoss::AntiWrapped => {
            let aw = tape.anti_wrap(d)?;
            let mut total = tape.mean(aw)?;
            for axis in [0, 1] {
                if let Some(dd) = diff(tape, d, axis)? {
                    let aw = tape.anti_wrap(dd)?;
                    let m = tape.mean(aw)?;
                    total = tape.add(total, m)?;
                }
            }
            Ok(total)
        }
    }
}

pub fn phase_loss_tape(tape: &mut Tape, shat: Var, s: Var, kind: PhaseLoss) -> Result<Var> {
    same_shape(tape, shat, s)?;
    let a = phase_tape(tape, shat)?;
    let b = phase_tape(tape, s)?;
    phase_grid_tape(tape, a, b, kind)
}

/// Distance between `shat` and the STFT of its own `out_len`-sample
/// resynthesis, on compressed complex values.
pub fn consistency_tape(tape: &mut Tape, shat: Var, plan: &StftPlan, out_len: usize) -> Result<Var> {
    let (t, _) = spec_shape(tape, shat)?;
    if plan.config().num_frames(out_len) != t {
        return Err(Error::shape(format!(
            "{out_len} samples give {} frames, spectrogram has {t}",
            plan.config().num_frames(out_len)
        )));
    }
    let wave = tape.istft(shat, plan, out_len)?;
    consistency_from_wave_tape(tape, shat, wave, plan)
}

/// [`consistency_tape`] reusing an already synthesized waveform.
pub fn consistency_from_wave_tape(tape: &mut Tape, shat: Var, wave: Var, plan: &StftPlan) -> Result<Var> {
    let back = tape.stft(wave, plan)?;
    same_shape(tape, back, shat)?;
    let c = plan.config().compression_exponent;
    let a = tape.compress_complex(shat, c)?;
    let b = tape.compress_complex(back, c)?;
    mse(tape, a, b)
}

/// Tape handles of the weighted total and of each evaluated term.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub time: Option<Var>,
    pub magnitude: Option<Var>,
    pub complex: Option<Var>,
    pub phase: Option<Var>,
    pub consistency: Option<Var>,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        LossTerms {
            time: v(self.time),
            magnitude: v(self.magnitude),
            complex: v(self.complex),
            phase: v(self.phase),
            consistency: v(self.consistency),
            total: tape.value(self.total).item(),
        }
    }
}

/// `Σ w_k · loss_k`; terms with zero weight are never recorded. `yhat`
/// must be the synthesis of `shat` (it is reused by the consistency term).
#[allow(clippy::too_many_arguments)]
pub fn total_loss_tape(
    tape: &mut Tape,
    yhat: Var,
    y: Var,
    shat: Var,
    s: Var,
    w: &LossWeights,
    plan: &StftPlan,
) -> Result<LossVars> {
    w.validate()?;
    let c = plan.config().compression_exponent;
    let mut parts: Vec<(f64, Var)> = Vec::new();
    let mut vars = LossVars { total: yhat, time: None, magnitude: None, complex: None, phase: None, consistency: None };
    if w.w_time > 0.0 {
        let l = time_tape(tape, yhat, y)?;
        vars.time = Some(l);
        parts.push((w.w_time, l));
    }
    if w.w_mag > 0.0 {
        let l = magnitude_tape(tape, shat, s, c)?;
        vars.magnitude = Some(l);
        parts.push((w.w_mag, l));
    }
    if w.w_complex > 0.0 {
        let l = complex_tape(tape, shat, s, c)?;
        vars.complex = Some(l);
        parts.push((w.w_complex, l));
    }
    if w.w_phase > 0.0 {
        let l = phase_loss_tape(tape, shat, s, w.phase_loss)?;
        vars.phase = Some(l);
        parts.push((w.w_phase, l));
    }
    if w.w_consistency > 0.0 {
        let l = consistency_from_wave_tape(tape, shat, yhat, plan)?;
        vars.consistency = Some(l);
        parts.push((w.w_consistency, l));
    }
    let mut total = None;
    for (k, l) in parts {
        let term = tape.scale(l, k)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    vars.total = total.expect("validated weights leave at least one term");
    Ok(vars)
}

// ---- plain-value wrappers -------------------------------------------

/// `[2, T, F]` tensor of a spectrogram.
pub fn spec_tensor(s: &Spectrogram) -> Tensor {
    let mut data = s.real.clone();
    data.extend_from_slice(&s.imag);
    Tensor::new(alloc::vec![2, s.frames, s.bins], data).expect("spectrogram grids are frames × bins")
}

fn check_specs(a: &Spectrogram, b: &Spectrogram) -> Result<()> {
    if a.frames != b.frames || a.bins != b.bins {
        return Err(Error::shape(format!(
            "spectrograms {}×{} vs {}×{}",
            a.frames, a.bins, b.frames, b.bins
        )));
    }
    Ok(())
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.value(v).item())
}

pub fn loss_time(yhat: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::LengthMismatch { left: yhat.len(), right: y.len() });
    }
    eval(|t| {
        let a = t.constant(Tensor::from_vec(yhat.samples.clone()));
        let b = t.constant(Tensor::from_vec(y.samples.clone()));
        time_tape(t, a, b)
    })
}

pub fn loss_magnitude(shat: &Spectrogram, s: &Spectrogram, c: f64) -> Result<f64> {
    check_specs(shat, s)?;
    eval(|t| {
        let a = t.constant(spec_tensor(shat));
        let b = t.constant(spec_tensor(s));
        magnitude_tape(t, a, b, c)
    })
}

pub fn loss_complex(shat: &Spectrogram, s: &Spectrogram, c: f64) -> Result<f64> {
    check_specs(shat, s)?;
    eval(|t| {
        let a = t.constant(spec_tensor(shat));
        let b = t.constant(spec_tensor(s));
        complex_tape(t, a, b, c)
    })
}

pub fn loss_phase(shat: &Spectrogram, s: &Spectrogram, kind: PhaseLoss) -> Result<f64> {
    check_specs(shat, s)?;
    eval(|t| {
        let a = t.constant(spec_tensor(shat));
        let b = t.constant(spec_tensor(s));
        phase_loss_tape(t, a, b, kind)
    })
}

/// Phase loss on explicit `T × F` phase grids (row-major).
pub fn loss_phase_grids(phat: &[f64], p: &[f64], frames: usize, bins: usize, kind: PhaseLoss) -> Result<f64> {
    eval(|t| {
        let a = t.constant(Tensor::new(alloc::vec![frames, bins], phat.to_vec())?);
        let b = t.constant(Tensor::new(alloc::vec![frames, bins], p.to_vec())?);
        phase_grid_tape(t, a, b, kind)
    })
}

/// Consistency of `shat` against its `out_len`-sample resynthesis.
pub fn loss_consistency(shat: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<f64> {
    let plan = StftPlan::new(cfg)?;
    if shat.bins != cfg.bins() {
        return Err(Error::config(format!("spectrogram has {} bins, config expects {}", shat.bins, cfg.bins())));
    }
    eval(|t| {
        let a = t.constant(spec_tensor(shat));
        consistency_tape(t, a, &plan, out_len)
    })
}

pub fn total_loss(
    yhat: &AudioBuffer,
    y: &AudioBuffer,
    shat: &Spectrogram,
    s: &Spectrogram,
    w: &LossWeights,
    cfg: &StftConfig,
) -> Result<LossTerms> {
    if yhat.len() != y.len() {
        return Err(Error::LengthMismatch { left: yhat.len(), right: y.len() });
    }
    check_specs(shat, s)?;
    let plan = StftPlan::new(cfg)?;
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(yhat.samples.clone()));
    let b = tape.constant(Tensor::from_vec(y.samples.clone()));
    let sa = tape.constant(spec_tensor(shat));
    let sb = tape.constant(spec_tensor(s));
    let vars = total_loss_tape(&mut tape, a, b, sa, sb, w, &plan)?;
    Ok(vars.values(&tape))
}

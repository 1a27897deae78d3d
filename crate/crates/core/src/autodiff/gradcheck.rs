//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is zero are judged by absolute error instead.
    pub floor: f64,
    /// Check at most this many entries per input (evenly strided);
    /// `usize::MAX` checks all of them.
    pub max_entries: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { h: 1e-5, floor: 1e-6, max_entries: usize::MAX }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Entry with the largest relative error.
    pub worst: Option<Mismatch>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Builds `f` on a fresh tape with `inputs` as trainable leaves, takes the
/// analytic gradient of its scalar output, and compares each checked entry
/// to `(f(x+h) - f(x-h)) / 2h`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::Contract(alloc::format!("gradcheck target has shape {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradcheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let stride = if opts.max_entries >= n { 1 } else { n.div_ceil(opts.max_entries) };
        for i in (0..n).step_by(stride) {
            let analytic = grads.get(vars[k]).map_or(0.0, |g| g.data()[i]);
            let orig = x.data()[i];
            work[k].data_mut()[i] = orig + opts.h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let e = rel_err(analytic, numeric, opts.floor);
            report.checked += 1;
            if report.worst.as_ref().is_none_or(|w| e > w.rel_err) || !e.is_finite() {
                report.worst = Some(Mismatch { input: k, index: i, analytic, numeric, rel_err: e });
            }
        }
    }
    Ok(report)
}

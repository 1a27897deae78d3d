//! One optimizer step of the enhancement network: forward on a tape, the
//! composite loss, backward, and AdamW over gradients averaged across a
//! small accumulation window.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{adamw_step, AdamWConfig, AdamWState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::loss::{total_loss_tape, LossTerms, LossWeights};
use crate::model::{Model, VisualEmbeddingSequence};

/// A single training pair with its precomputed clean spectrogram.
#[derive(Clone, Debug)]
pub struct Example {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub visual: Option<VisualEmbeddingSequence>,
    clean_spec: Tensor,
}

impl Example {
    pub fn new(model: &Model, noisy: Vec<f64>, clean: Vec<f64>, visual: Option<VisualEmbeddingSequence>) -> Result<Self> {
        if noisy.len() != clean.len() {
            return Err(Error::LengthMismatch { left: noisy.len(), right: clean.len() });
        }
        let (frames, mut re, im) = model.plan().analyze(&clean);
        re.extend(im);
        let clean_spec = Tensor::new(alloc::vec![2, frames, model.config().stft.bins()], re)?;
        Ok(Example { noisy, clean, visual, clean_spec })
    }
}

/// Loss, per-parameter gradients and the enhanced waveform of one example.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub terms: LossTerms,
    pub grads: BTreeMap<String, Tensor>,
    pub enhanced: Vec<f64>,
}

pub fn compute_gradients(model: &Model, ex: &Example, weights: &LossWeights) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let out = model.forward_tape(&mut tape, &p, &ex.noisy, ex.visual.as_ref())?;
    let y = tape.constant(Tensor::from_vec(ex.clean.clone()));
    let s = tape.constant(ex.clean_spec.clone());
    let loss = total_loss_tape(&mut tape, out.wave, y, out.spec, s, weights, model.plan())?;
    let terms = loss.values(&tape);
    if !terms.total.is_finite() {
        return Err(Error::domain("loss is not finite"));
    }
    let g = tape.backward(loss.total)?;
    let mut grads = BTreeMap::new();
    let mut missing = None;
    p.for_each(&mut |name, v| match g.get(*v) {
        Some(t) => {
            grads.insert(String::from(name), t.clone());
        }
        None => missing = Some(String::from(name)),
    });
    if let Some(name) = missing {
        return Err(Error::Contract(alloc::format!("no gradient reached `{name}`")));
    }
    let enhanced = tape.value(out.wave).data().to_vec();
    Ok(StepOutput { terms, grads, enhanced })
}

/// Running sum of gradients over an accumulation window.
#[derive(Clone, Debug, Default)]
pub struct GradAccumulator {
    sum: BTreeMap<String, Tensor>,
    count: usize,
}

impl GradAccumulator {
    pub fn add(&mut self, grads: BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            match self.sum.get_mut(&name) {
                None => {
                    self.sum.insert(name, g);
                }
                Some(acc) if acc.shape() == g.shape() => {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
                Some(acc) => {
                    return Err(Error::shape(alloc::format!(
                        "`{name}`: accumulated {:?} vs new {:?}",
                        acc.shape(),
                        g.shape()
                    )))
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The mean gradient; resets the accumulator.
    pub fn take_mean(&mut self) -> BTreeMap<String, Tensor> {
        let n = self.count.max(1) as f64;
        self.count = 0;
        let mut sum = core::mem::take(&mut self.sum);
        for t in sum.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        sum
    }
}

/// Applies one AdamW update to the model's parameters.
pub fn apply_update(
    model: &mut Model,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    let mut named = model.named_params();
    adamw_step(&mut named, grads, state, cfg)?;
    model.params_mut().for_each_mut(&mut |name, t| {
        if let Some(new) = named.remove(name) {
            *t = new;
        }
    });
    Ok(())
}

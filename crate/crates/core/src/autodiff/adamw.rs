use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math::{powf, sqrt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            betas: (0.9, 0.99),
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optimizer.lr must be positive"));
        }
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("optimizer.betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optimizer.eps must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("optimizer.weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// First and second moments per parameter name, plus the shared step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One AdamW update with decoupled weight decay and bias correction.
///
/// Parameters without an entry in `grads` are treated as having a zero
/// gradient (they still decay).
pub fn adamw_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, g) in grads {
        match params.get(name) {
            None => return Err(Error::shape(alloc::format!("gradient for unknown parameter `{name}`"))),
            Some(p) if p.shape() != g.shape() => {
                return Err(Error::shape(alloc::format!(
                    "`{name}`: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )))
            }
            _ => {}
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as f64;
    let bc1 = 1.0 - powf(b1, t);
    let bc2 = 1.0 - powf(b2, t);
    for (name, p) in params.iter_mut() {
        let n = p.numel();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n || v.len() != n {
            return Err(Error::shape(alloc::format!("optimizer state for `{name}` has the wrong size")));
        }
        let g = grads.get(name).map(|g| g.data());
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *w -= cfg.lr * cfg.weight_decay * *w;
            *w -= cfg.lr * mhat / (sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

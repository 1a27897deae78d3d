//! Selective scan: the input-conditioned linear recurrence at the heart of
//! a Mamba block.
//!
//! For every channel `c` and state index `n`:
//!
//! ```text
//! h[t] = exp(Δ[t,c]·A[c,n])·h[t-1] + Δ[t,c]·B[t,n]·u[t,c],   h[0] = 0
//! y[t,c] = Σ_n C[t,n]·h[t] + D[c]·u[t,c]
//! ```
//!
//! Batched kernels take row-major `[batch, len, channels]` activations and
//! `[batch, len, state]` input/output maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::exp;

/// Chunk length used by [`selective_scan_fast`] and the batched kernels.
pub const DEFAULT_SCAN_CHUNK: usize = 64;

/// One sequence worth of scan inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs {
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    /// `len × d_inner`
    pub u: Vec<f64>,
    /// `len × d_inner`, strictly positive
    pub delta: Vec<f64>,
    /// `len × d_state`
    pub b: Vec<f64>,
    /// `len × d_state`
    pub c: Vec<f64>,
}

impl ScanInputs {
    pub fn dims(&self) -> ScanDims {
        ScanDims {
            batch: 1,
            len: self.len,
            channels: self.d_inner,
            state: self.d_state,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanDims {
    pub fn check(
        &self,
        u: &[f64],
        delta: &[f64],
        b: &[f64],
        c: &[f64],
        a: &[f64],
        d: &[f64],
    ) -> Result<()> {
        let act = self.batch * self.len * self.channels;
        let maps = self.batch * self.len * self.state;
        if self.len == 0 {
            return Err(Error::shape("scan length must be at least 1"));
        }
        if u.len() != act || delta.len() != act {
            return Err(Error::shape("u and delta must be batch × len × channels"));
        }
        if b.len() != maps || c.len() != maps {
            return Err(Error::shape("B and C must be batch × len × state"));
        }
        if a.len() != self.channels * self.state {
            return Err(Error::shape("A must be channels × state"));
        }
        if d.len() != self.channels {
            return Err(Error::shape("D must have one entry per channel"));
        }
        if let Some(v) = delta.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain(alloc::format!("delta must be positive, found {v}")));
        }
        Ok(())
    }
}

/// Plain per-step evaluation of the recurrence, used as the reference for
/// every faster path.
pub fn selective_scan_seq(inputs: &ScanInputs, a: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let dims = inputs.dims();
    dims.check(&inputs.u, &inputs.delta, &inputs.b, &inputs.c, a, d)?;
    let (len, ch, ns) = (dims.len, dims.channels, dims.state);
    let mut y = vec![0.0; len * ch];
    for c in 0..ch {
        let mut h = vec![0.0; ns];
        for t in 0..len {
            let dt = inputs.delta[t * ch + c];
            let u = inputs.u[t * ch + c];
            let mut acc = 0.0;
            for n in 0..ns {
                h[n] = exp(dt * a[c * ns + n]) * h[n] + dt * inputs.b[t * ns + n] * u;
                acc += inputs.c[t * ns + n] * h[n];
            }
            y[t * ch + c] = acc + d[c] * u;
        }
    }
    Ok(y)
}

/// Chunked evaluation with the default chunk length.
pub fn selective_scan_fast(inputs: &ScanInputs, a: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    selective_scan_chunked(inputs, a, d, DEFAULT_SCAN_CHUNK)
}

pub fn selective_scan_chunked(
    inputs: &ScanInputs,
    a: &[f64],
    d: &[f64],
    chunk: usize,
) -> Result<Vec<f64>> {
    let dims = inputs.dims();
    dims.check(&inputs.u, &inputs.delta, &inputs.b, &inputs.c, a, d)?;
    if dims.len == 1 {
        return selective_scan_seq(inputs, a, d);
    }
    let mut y = vec![0.0; dims.len * dims.channels];
    scan_forward(dims, &inputs.u, &inputs.delta, &inputs.b, &inputs.c, a, d, chunk, &mut y);
    Ok(y)
}

/// Batched chunked forward. Shapes must already be checked.
///
/// Each chunk is first scanned from a zero state while the running decay
/// product is tracked; the state carried in from the previous chunk is then
/// folded in through that product. Chunks therefore only depend on each
/// other through one `state`-sized vector.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward(
    dims: ScanDims,
    u: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    d: &[f64],
    chunk: usize,
    y: &mut [f64],
) {
    let ScanDims { batch, len, channels: ch, state: ns } = dims;
    let chunk = chunk.max(1).min(len);
    let mut h_local = vec![0.0; ns];
    let mut carry = vec![0.0; ns];
    let mut decay = vec![0.0; chunk * ns];
    for bi in 0..batch {
        let act = &u[bi * len * ch..(bi + 1) * len * ch];
        let dts = &delta[bi * len * ch..(bi + 1) * len * ch];
        let bm = &b[bi * len * ns..(bi + 1) * len * ns];
        let cm = &c[bi * len * ns..(bi + 1) * len * ns];
        let out = &mut y[bi * len * ch..(bi + 1) * len * ch];
        for c_idx in 0..ch {
            let a_row = &a[c_idx * ns..(c_idx + 1) * ns];
            carry.iter_mut().for_each(|v| *v = 0.0);
            let mut start = 0;
            while start < len {
                let end = (start + chunk).min(len);
                h_local.iter_mut().for_each(|v| *v = 0.0);
                for t in start..end {
                    let dt = dts[t * ch + c_idx];
                    let ut = act[t * ch + c_idx];
                    let b_row = &bm[t * ns..(t + 1) * ns];
                    let c_row = &cm[t * ns..(t + 1) * ns];
                    let k = t - start;
                    let (prev, cur) = if k == 0 {
                        (None, &mut decay[..ns])
                    } else {
                        let (lo, hi) = decay.split_at_mut(k * ns);
                        (Some(&lo[(k - 1) * ns..]), &mut hi[..ns])
                    };
                    let mut acc = 0.0;
                    for n in 0..ns {
                        let an = exp(dt * a_row[n]);
                        h_local[n] = an * h_local[n] + dt * b_row[n] * ut;
                        cur[n] = match prev {
                            Some(p) => an * p[n],
                            None => an,
                        };
                        acc += c_row[n] * h_local[n];
                    }
                    out[t * ch + c_idx] = acc + d[c_idx] * ut;
                }
                if start > 0 {
                    for t in start..end {
                        let k = t - start;
                        let c_row = &cm[t * ns..(t + 1) * ns];
                        let p = &decay[k * ns..(k + 1) * ns];
                        let mut acc = 0.0;
                        for n in 0..ns {
                            acc += c_row[n] * p[n] * carry[n];
                        }
                        out[t * ch + c_idx] += acc;
                    }
                }
                let last = &decay[(end - start - 1) * ns..(end - start) * ns];
                for n in 0..ns {
                    carry[n] = h_local[n] + last[n] * carry[n];
                }
                start = end;
            }
        }
    }
}

/// Gradients of a scan with respect to all of its inputs.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub d: Vec<f64>,
}

/// Adjoint of the scan.
///
/// Hidden states are recomputed one channel at a time (`len × state`
/// scratch), then the adjoint recurrence
/// `λ[t] = g[t]·C[t] + exp(Δ[t+1]·A)·λ[t+1]` runs backward.
#[allow(clippy::too_many_arguments)]
pub fn scan_backward(
    dims: ScanDims,
    u: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    d: &[f64],
    gy: &[f64],
) -> ScanGrads {
    let ScanDims { batch, len, channels: ch, state: ns } = dims;
    let mut g = ScanGrads {
        u: vec![0.0; u.len()],
        delta: vec![0.0; delta.len()],
        b: vec![0.0; b.len()],
        c: vec![0.0; c.len()],
        a: vec![0.0; a.len()],
        d: vec![0.0; d.len()],
    };
    let mut states = vec![0.0; len * ns];
    let mut decays = vec![0.0; len * ns];
    let mut lambda = vec![0.0; ns];
    for bi in 0..batch {
        let act_off = bi * len * ch;
        let map_off = bi * len * ns;
        for c_idx in 0..ch {
            let a_row = &a[c_idx * ns..(c_idx + 1) * ns];
            // Recompute states.
            for t in 0..len {
                let dt = delta[act_off + t * ch + c_idx];
                let ut = u[act_off + t * ch + c_idx];
                let b_row = &b[map_off + t * ns..map_off + (t + 1) * ns];
                for n in 0..ns {
                    let an = exp(dt * a_row[n]);
                    let prev = if t == 0 { 0.0 } else { states[(t - 1) * ns + n] };
                    decays[t * ns + n] = an;
                    states[t * ns + n] = an * prev + dt * b_row[n] * ut;
                }
            }
            lambda.iter_mut().for_each(|v| *v = 0.0);
            let mut ga_row = vec![0.0; ns];
            let mut gd = 0.0;
            for t in (0..len).rev() {
                let idx = act_off + t * ch + c_idx;
                let gt = gy[idx];
                let dt = delta[idx];
                let ut = u[idx];
                let b_row = &b[map_off + t * ns..map_off + (t + 1) * ns];
                let c_row = &c[map_off + t * ns..map_off + (t + 1) * ns];
                let gb_row = map_off + t * ns;
                let mut gu = gt * d[c_idx];
                let mut gdt = 0.0;
                gd += gt * ut;
                for n in 0..ns {
                    if t + 1 < len {
                        lambda[n] *= decays[(t + 1) * ns + n];
                    }
                    lambda[n] += gt * c_row[n];
                    g.c[gb_row + n] += gt * states[t * ns + n];
                    let prev = if t == 0 { 0.0 } else { states[(t - 1) * ns + n] };
                    let l = lambda[n];
                    let da = l * prev * decays[t * ns + n];
                    gu += l * dt * b_row[n];
                    gdt += da * a_row[n] + l * b_row[n] * ut;
                    g.b[gb_row + n] += l * dt * ut;
                    ga_row[n] += da * dt;
                }
                g.u[idx] += gu;
                g.delta[idx] += gdt;
            }
            for n in 0..ns {
                g.a[c_idx * ns + n] += ga_row[n];
            }
            g.d[c_idx] += gd;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_inputs(len: usize, d_inner: usize, d_state: usize, seed: u64) -> (ScanInputs, Vec<f64>, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let inputs = ScanInputs {
            len,
            d_inner,
            d_state,
            u: (0..len * d_inner).map(|_| rng.normal()).collect(),
            delta: (0..len * d_inner).map(|_| rng.uniform(1e-3, 0.5)).collect(),
            b: (0..len * d_state).map(|_| rng.normal()).collect(),
            c: (0..len * d_state).map(|_| rng.normal()).collect(),
        };
        let a = (0..d_inner * d_state).map(|_| -rng.uniform(0.1, 4.0)).collect();
        let d = (0..d_inner).map(|_| rng.normal()).collect();
        (inputs, a, d)
    }

    #[test]
    fn single_step_closed_form() {
        let inputs = ScanInputs {
            len: 1,
            d_inner: 1,
            d_state: 2,
            u: vec![1.5],
            delta: vec![0.2],
            b: vec![0.3, -0.7],
            c: vec![2.0, 0.5],
        };
        let a = [-1.0, -2.0];
        let d = [0.25];
        let y = selective_scan_seq(&inputs, &a, &d).unwrap();
        let want = 2.0 * (0.2 * 0.3 * 1.5) + 0.5 * (0.2 * -0.7 * 1.5) + 0.25 * 1.5;
        assert!((y[0] - want).abs() < 1e-15);
        let fast = selective_scan_fast(&inputs, &a, &d).unwrap();
        assert_eq!(y[0].to_bits(), fast[0].to_bits());
    }

    #[test]
    fn zero_decay_is_cumulative_sum() {
        let inputs = ScanInputs {
            len: 3,
            d_inner: 1,
            d_state: 1,
            u: vec![1.0, 2.0, 3.0],
            delta: vec![1.0; 3],
            b: vec![1.0; 3],
            c: vec![1.0; 3],
        };
        let y = selective_scan_seq(&inputs, &[0.0], &[0.0]).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 6.0]);
        let y = selective_scan_chunked(&inputs, &[0.0], &[0.0], 2).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn chunk_sizes_agree() {
        let (inputs, a, d) = random_inputs(97, 3, 5, 11);
        let reference = selective_scan_seq(&inputs, &a, &d).unwrap();
        for chunk in [1, 2, 7, 64, 97, 500] {
            let y = selective_scan_chunked(&inputs, &a, &d, chunk).unwrap();
            for (p, q) in reference.iter().zip(&y) {
                assert!((p - q).abs() < 1e-12, "chunk {chunk}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut inputs, a, d) = random_inputs(4, 2, 3, 1);
        inputs.delta[3] = 0.0;
        assert!(matches!(selective_scan_seq(&inputs, &a, &d), Err(Error::Domain(_))));
        let (inputs, a, _) = random_inputs(4, 2, 3, 1);
        assert!(matches!(selective_scan_fast(&inputs, &a, &[1.0]), Err(Error::Shape(_))));
        let (mut inputs, a, d) = random_inputs(4, 2, 3, 1);
        inputs.b.pop();
        assert!(matches!(selective_scan_fast(&inputs, &a, &d), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_is_adjoint_of_linearization() {
        // Directional derivative by central differences vs the adjoint.
        let (inputs, a, d) = random_inputs(9, 2, 3, 21);
        let dims = inputs.dims();
        let mut rng = Rng::new(99);
        let gy: Vec<f64> = (0..9 * 2).map(|_| rng.normal()).collect();
        let eval = |inp: &ScanInputs, a: &[f64], d: &[f64]| -> f64 {
            let y = selective_scan_seq(inp, a, d).unwrap();
            y.iter().zip(&gy).map(|(p, q)| p * q).sum()
        };
        let g = scan_backward(dims, &inputs.u, &inputs.delta, &inputs.b, &inputs.c, &a, &d, &gy);
        let h = 1e-6;
        for i in 0..inputs.delta.len() {
            let mut p = inputs.clone();
            let mut m = inputs.clone();
            p.delta[i] += h;
            m.delta[i] -= h;
            let fd = (eval(&p, &a, &d) - eval(&m, &a, &d)) / (2.0 * h);
            assert!((fd - g.delta[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
        for i in 0..a.len() {
            let mut p = a.clone();
            let mut m = a.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (eval(&inputs, &p, &d) - eval(&inputs, &m, &d)) / (2.0 * h);
            assert!((fd - g.a[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }
}

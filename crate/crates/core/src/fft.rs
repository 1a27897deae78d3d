//! Mixed-radix complex FFT for arbitrary lengths.
//!
//! Lengths are factored into small primes and evaluated by recursive
//! decimation in time with a generic radix-`p` butterfly, so the cost is
//! `O(n · Σ p)`. The STFT default (`n = 400 = 2⁴·5²`) and the STOI
//! transform (`n = 512`) both stay cheap; a large prime length degrades
//! gracefully to a direct DFT.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::math::{cos, sin, TAU};

#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    /// `(radix, remaining length)` per stage, outermost first.
    stages: Vec<(usize, usize)>,
    /// `exp(-2πi·k/n)` for `k` in `0..n`.
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let mut stages = Vec::new();
        let mut rest = n;
        let mut p = 4;
        while rest > 1 {
            while rest % p != 0 {
                p = match p {
                    4 => 2,
                    2 => 3,
                    _ => p + 2,
                };
                if p * p > rest {
                    p = rest;
                }
            }
            rest /= p;
            stages.push((p, rest));
        }
        let twiddles = (0..n)
            .map(|k| {
                let a = -TAU * k as f64 / n as f64;
                Complex64::new(cos(a), sin(a))
            })
            .collect();
        FftPlan { n, stages, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = Σ x[n]·exp(-2πi·kn/N)` into `out`.
    pub fn forward(&self, input: &[Complex64], out: &mut [Complex64]) {
        assert_eq!(input.len(), self.n);
        assert_eq!(out.len(), self.n);
        if self.stages.is_empty() {
            out.copy_from_slice(input);
            return;
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.stages[0].0];
        self.work(out, input, 1, &self.stages, &mut scratch);
    }

    /// Unnormalized inverse `x[n] = Σ X[k]·exp(+2πi·kn/N)`.
    pub fn inverse(&self, input: &[Complex64], out: &mut [Complex64]) {
        let conj: Vec<Complex64> = input.iter().map(|c| c.conj()).collect();
        self.forward(&conj, out);
        for c in out.iter_mut() {
            *c = c.conj();
        }
    }

    fn work(
        &self,
        out: &mut [Complex64],
        input: &[Complex64],
        stride: usize,
        stages: &[(usize, usize)],
        scratch: &mut Vec<Complex64>,
    ) {
        let (p, m) = stages[0];
        if m == 1 {
            for (q, o) in out.iter_mut().enumerate().take(p) {
                *o = input[q * stride];
            }
        } else {
            for q in 0..p {
                self.work(
                    &mut out[q * m..(q + 1) * m],
                    &input[q * stride..],
                    stride * p,
                    &stages[1..],
                    scratch,
                );
            }
        }
        self.butterfly(out, stride, m, p, scratch);
    }

    fn butterfly(
        &self,
        out: &mut [Complex64],
        stride: usize,
        m: usize,
        p: usize,
        scratch: &mut Vec<Complex64>,
    ) {
        if scratch.len() < p {
            scratch.resize(p, Complex64::new(0.0, 0.0));
        }
        let n = self.n;
        if p == 2 {
            for u in 0..m {
                let t = out[u + m] * self.twiddles[u * stride];
                let a = out[u];
                out[u] = a + t;
                out[u + m] = a - t;
            }
            return;
        }
        for u in 0..m {
            for q in 0..p {
                scratch[q] = out[u + q * m];
            }
            for q1 in 0..p {
                let k = u + q1 * m;
                let mut acc = scratch[0];
                let step = (stride * k) % n;
                let mut idx = 0;
                for s in &scratch[1..p] {
                    idx += step;
                    if idx >= n {
                        idx -= n;
                    }
                    acc += s * self.twiddles[idx];
                }
                out[k] = acc;
            }
        }
    }
}

/// Real-input transform returning the `n/2 + 1` non-redundant bins.
pub fn rfft(plan: &FftPlan, frame: &[f64], buf: &mut Vec<Complex64>, out: &mut [Complex64]) {
    let n = plan.len();
    buf.clear();
    buf.extend(frame.iter().map(|&x| Complex64::new(x, 0.0)));
    buf.resize(n, Complex64::new(0.0, 0.0));
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    plan.forward(buf, &mut full);
    let bins = out.len();
    out.copy_from_slice(&full[..bins]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, v)| {
                    let a = -TAU * ((k * j) % n) as f64 / n as f64;
                    acc + v * Complex64::new(cos(a), sin(a))
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_across_lengths() {
        let mut rng = Rng::new(3);
        for &n in &[1usize, 2, 3, 4, 5, 6, 7, 8, 12, 16, 30, 49, 64, 97, 100, 400, 512] {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect();
            let plan = FftPlan::new(n);
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            plan.forward(&x, &mut out);
            let want = naive_dft(&x);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).norm() < 1e-9 * (n as f64), "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = Rng::new(5);
        let n = 400;
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.normal(), 0.0)).collect();
        let plan = FftPlan::new(n);
        let mut f = vec![Complex64::new(0.0, 0.0); n];
        let mut back = vec![Complex64::new(0.0, 0.0); n];
        plan.forward(&x, &mut f);
        plan.inverse(&f, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b / n as f64).norm() < 1e-12);
        }
    }
}

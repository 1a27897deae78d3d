//! Define-by-run tape. Every op appends a node holding its output value and
//! whatever the backward pass needs; [`Tape::backward`] walks the nodes in
//! exact reverse order of creation.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::dsp::{StftPlan, MAGNITUDE_FLOOR};
use crate::error::{Error, Result};
use crate::math::{self, anti_wrap, atan2, cos, exp, ln, powf, sigmoid, sin, softplus, sqrt, tanh, TAU};
use crate::ssm::scan::{self, ScanDims};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Log,
    Sqrt,
    Softplus,
    Silu,
    Sigmoid,
    Tanh,
    Abs,
    Neg,
    Cos,
    Sin,
    Square,
    /// `|x - 2π·round(x/2π)|`
    AntiWrap,
    /// `x^p` for `x ≥ 0`.
    Pow(f64),
    Scale(f64),
    AddScalar(f64),
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => exp(x),
            Unary::Log => ln(x),
            Unary::Sqrt => sqrt(x),
            Unary::Softplus => softplus(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => tanh(x),
            Unary::Abs => x.abs(),
            Unary::Neg => -x,
            Unary::Cos => cos(x),
            Unary::Sin => sin(x),
            Unary::Square => x * x,
            Unary::AntiWrap => anti_wrap(x),
            Unary::Pow(p) => powf(x, p),
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
        }
    }

    /// Derivative given input `x` and output `y`. Kinks and the origin of
    /// fractional powers use a zero subgradient.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Abs => signum0(x),
            Unary::Neg => -1.0,
            Unary::Cos => -sin(x),
            Unary::Sin => cos(x),
            Unary::Square => 2.0 * x,
            Unary::AntiWrap => signum0(x - TAU * math::round(x / TAU)),
            Unary::Pow(p) => {
                if x > 0.0 {
                    p * powf(x, p - 1.0)
                } else if p >= 1.0 {
                    p * powf(0.0, p - 1.0)
                } else {
                    0.0
                }
            }
            Unary::Scale(c) => c,
            Unary::AddScalar(_) => 1.0,
        }
    }

    fn check_domain(self, x: f64) -> Result<()> {
        let bad = match self {
            Unary::Log => !(x > 0.0),
            Unary::Sqrt => x < 0.0,
            Unary::Pow(_) => x < 0.0,
            _ => false,
        };
        if bad {
            Err(Error::domain(alloc::format!("{self:?} undefined at {x}")))
        } else {
            Ok(())
        }
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Atan2(Var, Var),
    MatMul(Var, Var),
    Conv1dDepthwise(Var, Var),
    Conv2d { x: Var, w: Var, dilation: (usize, usize) },
    Slice { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Reverse { x: Var, axis: usize },
    Transpose01(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Scan { vars: [Var; 6], dims: ScanDims },
    Stft { x: Var, plan: Box<StftPlan> },
    Istft { spec: Var, plan: Box<StftPlan>, frames: usize },
    OuterTile { v: Var, s: Var },
    CompressComplex { spec: Var, c: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into `(outer, dim, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb = numel(sb);
        let suffix = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if !(suffix || nb == 1) {
            return Err(Error::shape(alloc::format!(
                "{kind:?}: cannot broadcast {sb:?} onto {sa:?}"
            )));
        }
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<f64> = da
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = db[i % nb];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    /// `a + b`, with `b` broadcast over leading axes when its shape is a
    /// suffix of `a`'s (or it holds one element).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let src = self.data(x);
        for &v in src {
            kind.check_domain(v)?;
        }
        let out = src.iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Unary(kind, x), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Cos, x)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sin, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn anti_wrap(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::AntiWrap, x)
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(Unary::Pow(p), x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(c), x)
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        if self.shape(y) != self.shape(x) {
            return Err(Error::shape("atan2 operands must share a shape"));
        }
        let out = self
            .data(y)
            .iter()
            .zip(self.data(x))
            .map(|(&a, &b)| atan2(a, b))
            .collect();
        let value = Tensor::new(self.shape(y).to_vec(), out)?;
        Ok(self.push(value, Op::Atan2(y, x), &[y, x]))
    }

    // ---- contractions ------------------------------------------------

    /// `a[..., K] · b[K, N] -> [..., N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape(alloc::format!("matmul {sa:?} · {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = numel(sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let av = da[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[kk * n..(kk + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Causal depthwise convolution along the sequence axis:
    /// `y[b,t,c] = Σ_k w[c,k]·x[b, t+k-(K-1), c]` with `x: [B, L, C]`,
    /// `w: [C, K]`.
    pub fn conv1d_depthwise(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[2] {
            return Err(Error::shape(alloc::format!("conv1d_depthwise {sx:?} * {sw:?}")));
        }
        let (bsz, len, ch, k) = (sx[0], sx[1], sx[2], sw[1]);
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = vec![0.0; bsz * len * ch];
        for b in 0..bsz {
            for t in 0..len {
                let o = &mut out[(b * len + t) * ch..(b * len + t + 1) * ch];
                for kk in 0..k {
                    let Some(src) = (t + kk).checked_sub(k - 1) else { continue };
                    let xi = &dx[(b * len + src) * ch..(b * len + src + 1) * ch];
                    for c in 0..ch {
                        o[c] += dw[c * k + kk] * xi[c];
                    }
                }
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(value, Op::Conv1dDepthwise(x, w), &[x, w]))
    }

    /// Zero-padded "same" 2-D convolution on a channels-last grid:
    /// `x: [T, F, Cin]`, `w: [KT, KF, Cin, Cout]` (odd kernel sizes),
    /// dilation `(along T, along F)`.
    pub fn conv2d(&mut self, x: Var, w: Var, dilation: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[2] != sx[2] || sw[0] % 2 == 0 || sw[1] % 2 == 0 {
            return Err(Error::shape(alloc::format!("conv2d {sx:?} * {sw:?}")));
        }
        let (t_len, f_len, cin) = (sx[0], sx[1], sx[2]);
        let (kt, kf, cout) = (sw[0], sw[1], sw[3]);
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = vec![0.0; t_len * f_len * cout];
        for_each_tap(t_len, f_len, kt, kf, dilation, |tap, dst, src| {
            let wt = &dw[tap * cin * cout..(tap + 1) * cin * cout];
            let xi = &dx[src * cin..(src + 1) * cin];
            let o = &mut out[dst * cout..(dst + 1) * cout];
            for (ci, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (ov, wv) in o.iter_mut().zip(&wt[ci * cout..(ci + 1) * cout]) {
                    *ov += xv * wv;
                }
            }
        });
        let value = Tensor::new(vec![t_len, f_len, cout], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, dilation }, &[x, w]))
    }

    // ---- layout ------------------------------------------------------

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(Error::shape(alloc::format!(
                "slice [{start}, {}) on axis {axis} of {sx:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = axis_split(sx, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sx.to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .nodes
            .get(parts.first().ok_or_else(|| Error::shape("concat of nothing"))?.0)
            .map(|n| n.value.shape().to_vec())
            .unwrap_or_default();
        if axis >= first.len() {
            return Err(Error::shape("concat axis out of range"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(alloc::format!("concat {s:?} with {first:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let d = self.shape(*p)[axis];
                let src = self.data(*p);
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn reverse(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x);
        if axis >= sx.len() {
            return Err(Error::shape("reverse axis out of range"));
        }
        let (outer, dim, inner) = axis_split(sx, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..dim {
                let a = (o * dim + i) * inner;
                let b = (o * dim + dim - 1 - i) * inner;
                out[a..a + inner].copy_from_slice(&src[b..b + inner]);
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(value, Op::Reverse { x, axis }, &[x]))
    }

    /// Swaps the first two axes.
    pub fn transpose01(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() < 2 {
            return Err(Error::shape("transpose01 needs rank >= 2"));
        }
        let (a, b, inner) = (sx[0], sx[1], numel(&sx[2..]));
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        transpose_blocks(src, &mut out, a, b, inner);
        let mut shape = sx.to_vec();
        shape.swap(0, 1);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Transpose01(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            return Err(Error::EmptyInput);
        }
        let s = d.iter().sum::<f64>() / d.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), &[x]))
    }

    // ---- fused blocks ------------------------------------------------

    /// Normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let d = *sx.last().ok_or_else(|| Error::shape("layer_norm of a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm affine parameters must match the last axis"));
        }
        let rows = numel(sx) / d.max(1);
        let (src, g, b) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]))
    }

    /// Selective scan with a hand-written adjoint.
    /// `u, delta: [B, L, D]`, `b, c: [B, L, N]`, `a: [D, N]`, `d: [D]`.
    pub fn scan(&mut self, u: Var, delta: Var, b: Var, c: Var, a: Var, d: Var) -> Result<Var> {
        let su = self.shape(u).to_vec();
        let sb = self.shape(b);
        if su.len() != 3 || sb.len() != 3 || sb[..2] != su[..2] {
            return Err(Error::shape(alloc::format!("scan u {su:?}, B {sb:?}")));
        }
        let dims = ScanDims { batch: su[0], len: su[1], channels: su[2], state: sb[2] };
        let (du, dd, db, dc, da, dskip) = (
            self.data(u),
            self.data(delta),
            self.data(b),
            self.data(c),
            self.data(a),
            self.data(d),
        );
        dims.check(du, dd, db, dc, da, dskip)?;
        let mut y = vec![0.0; du.len()];
        scan::scan_forward(dims, du, dd, db, dc, da, dskip, scan::DEFAULT_SCAN_CHUNK, &mut y);
        let value = Tensor::new(su, y)?;
        let vars = [u, delta, b, c, a, d];
        Ok(self.push(value, Op::Scan { vars, dims }, &vars))
    }

    /// STFT of a 1-D signal; output `[2, frames, bins]` (real, imaginary).
    pub fn stft(&mut self, x: Var, plan: &StftPlan) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 || sx[0] == 0 {
            return Err(Error::shape("stft input must be a non-empty 1-D signal"));
        }
        let (frames, mut re, im) = plan.analyze(self.data(x));
        re.extend_from_slice(&im);
        let value = Tensor::new(vec![2, frames, plan.config().bins()], re)?;
        Ok(self.push(value, Op::Stft { x, plan: Box::new(plan.clone()) }, &[x]))
    }

    /// Inverse STFT of `[2, frames, bins]` into exactly `out_len` samples.
    pub fn istft(&mut self, spec: Var, plan: &StftPlan, out_len: usize) -> Result<Var> {
        let ss = self.shape(spec);
        if ss.len() != 3 || ss[0] != 2 || ss[2] != plan.config().bins() {
            return Err(Error::config(alloc::format!(
                "istft expects [2, frames, {}], got {ss:?}",
                plan.config().bins()
            )));
        }
        let frames = ss[1];
        let half = frames * ss[2];
        let src = self.data(spec);
        let y = plan.synthesize(frames, &src[..half], &src[half..], out_len);
        let value = Tensor::from_vec(y);
        Ok(self.push(value, Op::Istft { spec, plan: Box::new(plan.clone()), frames }, &[spec]))
    }

    /// `y[t,f,c] = v[t,c]·s[f,c]`: tiles a per-frame vector across
    /// frequency with a per-bin scale.
    pub fn outer_tile(&mut self, v: Var, s: Var) -> Result<Var> {
        let (sv, ss) = (self.shape(v), self.shape(s));
        if sv.len() != 2 || ss.len() != 2 || sv[1] != ss[1] {
            return Err(Error::shape(alloc::format!("outer_tile {sv:?} with {ss:?}")));
        }
        let (t_len, f_len, ch) = (sv[0], ss[0], sv[1]);
        let (dv, ds) = (self.data(v), self.data(s));
        let mut out = vec![0.0; t_len * f_len * ch];
        for t in 0..t_len {
            for f in 0..f_len {
                for c in 0..ch {
                    out[(t * f_len + f) * ch + c] = dv[t * ch + c] * ds[f * ch + c];
                }
            }
        }
        let value = Tensor::new(vec![t_len, f_len, ch], out)?;
        Ok(self.push(value, Op::OuterTile { v, s }, &[v, s]))
    }

    /// Power-law compression of a complex grid `[2, ...]`:
    /// `(re, im) ↦ (re, im)·(|z|² + ε)^((c-1)/2)` with ε = [`MAGNITUDE_FLOOR`],
    /// i.e. `|z|^c·e^{iφ}` away from zero.
    pub fn compress_complex(&mut self, spec: Var, c: f64) -> Result<Var> {
        let ss = self.shape(spec);
        if ss.first() != Some(&2) {
            return Err(Error::shape("compress_complex expects a leading axis of 2"));
        }
        let half = numel(ss) / 2;
        let src = self.data(spec);
        let mut out = vec![0.0; src.len()];
        for i in 0..half {
            let (re, im) = (src[i], src[half + i]);
            let m2 = re * re + im * im + MAGNITUDE_FLOOR;
            let f = powf(m2, (c - 1.0) / 2.0);
            out[i] = re * f;
            out[half + i] = im * f;
        }
        let value = Tensor::new(ss.to_vec(), out)?;
        Ok(self.push(value, Op::CompressComplex { spec, c }, &[spec]))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut out = Gradients::default();
        if !root.requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out.grads.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let nb = db.len();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    match kind {
                        Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                        Binary::Mul => {
                            for (i, x) in ga.iter_mut().enumerate() {
                                *x += g[i] * db[i % nb];
                            }
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += match kind {
                            Binary::Add => *gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * da[i],
                        };
                    }
                }
            }
            Op::Unary(kind, x) => {
                let (src, y) = (self.data(*x), node.value.data());
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * kind.derivative(src[i], y[i]);
                    }
                }
            }
            Op::Atan2(y, x) => {
                let (dy, dx) = (self.data(*y), self.data(*x));
                // floored like the magnitude so tiny bins cannot overflow
                let denom = |i: usize| 1.0 / (dx[i] * dx[i] + dy[i] * dy[i] + MAGNITUDE_FLOOR);
                if let Some(gy) = self.grad_slot(grads, *y) {
                    for i in 0..gy.len() {
                        gy[i] += g[i] * dx[i] * denom(i);
                    }
                }
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] -= g[i] * dy[i] * denom(i);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                let m = da.len() / k.max(1);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &db[kk * n..(kk + 1) * n];
                            ga[i * k + kk] += grow.iter().zip(brow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = da[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Conv1dDepthwise(x, w) => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (bsz, len, ch, k) = (sx[0], sx[1], sx[2], sw[1]);
                let (dx, dw) = (self.data(*x), self.data(*w));
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for b in 0..bsz {
                        for t in 0..len {
                            let gt = &g[(b * len + t) * ch..(b * len + t + 1) * ch];
                            for kk in 0..k {
                                let Some(src) = (t + kk).checked_sub(k - 1) else { continue };
                                let base = (b * len + src) * ch;
                                for c in 0..ch {
                                    gx[base + c] += dw[c * k + kk] * gt[c];
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = self.grad_slot(grads, *w) {
                    for b in 0..bsz {
                        for t in 0..len {
                            let gt = &g[(b * len + t) * ch..(b * len + t + 1) * ch];
                            for kk in 0..k {
                                let Some(src) = (t + kk).checked_sub(k - 1) else { continue };
                                let xi = &dx[(b * len + src) * ch..(b * len + src + 1) * ch];
                                for c in 0..ch {
                                    gw[c * k + kk] += xi[c] * gt[c];
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, w, dilation } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (t_len, f_len, cin) = (sx[0], sx[1], sx[2]);
                let (kt, kf, cout) = (sw[0], sw[1], sw[3]);
                let (dx, dw) = (self.data(*x), self.data(*w));
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for_each_tap(t_len, f_len, kt, kf, *dilation, |tap, dst, src| {
                        let wt = &dw[tap * cin * cout..(tap + 1) * cin * cout];
                        let go = &g[dst * cout..(dst + 1) * cout];
                        let gi = &mut gx[src * cin..(src + 1) * cin];
                        for (ci, gv) in gi.iter_mut().enumerate() {
                            *gv += wt[ci * cout..(ci + 1) * cout]
                                .iter()
                                .zip(go)
                                .map(|(p, q)| p * q)
                                .sum::<f64>();
                        }
                    });
                }
                if let Some(gw) = self.grad_slot(grads, *w) {
                    for_each_tap(t_len, f_len, kt, kf, *dilation, |tap, dst, src| {
                        let go = &g[dst * cout..(dst + 1) * cout];
                        let xi = &dx[src * cin..(src + 1) * cin];
                        let gt = &mut gw[tap * cin * cout..(tap + 1) * cin * cout];
                        for (ci, &xv) in xi.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, gv) in gt[ci * cout..(ci + 1) * cout].iter_mut().zip(go) {
                                *o += xv * gv;
                            }
                        }
                    });
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let (outer, dim, inner) = axis_split(sx, *axis);
                let len = node.value.shape()[*axis];
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in 0..outer {
                        let base = (o * dim + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (a, b) in gx[base..base + len * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let d = self.shape(*p)[*axis];
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            for (a, b) in gp[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += d;
                }
            }
            Op::Reverse { x, axis } => {
                let (outer, dim, inner) = axis_split(node.value.shape(), *axis);
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..dim {
                            let a = (o * dim + i) * inner;
                            let b = (o * dim + dim - 1 - i) * inner;
                            for j in 0..inner {
                                gx[b + j] += g[a + j];
                            }
                        }
                    }
                }
            }
            Op::Transpose01(x) => {
                let s = node.value.shape();
                let (a, b, inner) = (s[0], s[1], numel(&s[2..]));
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let mut tmp = vec![0.0; g.len()];
                    transpose_blocks(g, &mut tmp, a, b, inner);
                    gx.iter_mut().zip(&tmp).for_each(|(p, q)| *p += q);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().for_each(|p| *p += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|p| *p += s);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.shape(*gamma)[0];
                let rows = inv_std.len();
                let gam = self.data(*gamma);
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for r in 0..rows {
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gam[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xhat[r * d + j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gam[j];
                            gx[r * d + j] += inv_std[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                        }
                    }
                }
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Scan { vars, dims } => {
                let [u, delta, b, c, a, d] = *vars;
                if !vars.iter().any(|v| self.requires_grad(*v)) {
                    return;
                }
                let sg = scan::scan_backward(
                    *dims,
                    self.data(u),
                    self.data(delta),
                    self.data(b),
                    self.data(c),
                    self.data(a),
                    self.data(d),
                    g,
                );
                for (v, gv) in [(u, sg.u), (delta, sg.delta), (b, sg.b), (c, sg.c), (a, sg.a), (d, sg.d)] {
                    if let Some(slot) = self.grad_slot(grads, v) {
                        slot.iter_mut().zip(&gv).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Stft { x, plan } => {
                let half = g.len() / 2;
                let len = self.shape(*x)[0];
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let back = plan.analyze_adjoint(len, &g[..half], &g[half..]);
                    gx.iter_mut().zip(&back).for_each(|(p, q)| *p += q);
                }
            }
            Op::Istft { spec, plan, frames } => {
                if let Some(gs) = self.grad_slot(grads, *spec) {
                    let (g_re, g_im) = plan.synthesize_adjoint(*frames, g);
                    let half = g_re.len();
                    gs[..half].iter_mut().zip(&g_re).for_each(|(p, q)| *p += q);
                    gs[half..].iter_mut().zip(&g_im).for_each(|(p, q)| *p += q);
                }
            }
            Op::OuterTile { v, s } => {
                let (sv, ss) = (self.shape(*v), self.shape(*s));
                let (t_len, f_len, ch) = (sv[0], ss[0], sv[1]);
                let (dv, ds) = (self.data(*v), self.data(*s));
                if let Some(gv) = self.grad_slot(grads, *v) {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            for c in 0..ch {
                                gv[t * ch + c] += g[(t * f_len + f) * ch + c] * ds[f * ch + c];
                            }
                        }
                    }
                }
                if let Some(gs) = self.grad_slot(grads, *s) {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            for c in 0..ch {
                                gs[f * ch + c] += g[(t * f_len + f) * ch + c] * dv[t * ch + c];
                            }
                        }
                    }
                }
            }
            Op::CompressComplex { spec, c } => {
                let src = self.data(*spec);
                let half = src.len() / 2;
                if let Some(gs) = self.grad_slot(grads, *spec) {
                    for i in 0..half {
                        let (re, im) = (src[i], src[half + i]);
                        let m2 = re * re + im * im + MAGNITUDE_FLOOR;
                        // f(re, im) = re·m2^k with k = (c-1)/2
                        let k = (c - 1.0) / 2.0;
                        let base = powf(m2, k);
                        let common = 2.0 * k * powf(m2, k - 1.0);
                        let (g_re, g_im) = (g[i], g[half + i]);
                        let d_re_re = base + common * re * re;
                        let d_re_im = common * re * im;
                        let d_im_im = base + common * im * im;
                        gs[i] += g_re * d_re_re + g_im * d_re_im;
                        gs[half + i] += g_re * d_re_im + g_im * d_im_im;
                    }
                }
            }
        }
    }
}

/// Visits every `(tap, output cell, input cell)` triple of a same-padded
/// dilated 2-D convolution over a `t_len × f_len` grid.
fn for_each_tap(
    t_len: usize,
    f_len: usize,
    kt: usize,
    kf: usize,
    dilation: (usize, usize),
    mut f: impl FnMut(usize, usize, usize),
) {
    let (ct, cf) = ((kt / 2) as isize, (kf / 2) as isize);
    for i in 0..kt {
        let off_t = (i as isize - ct) * dilation.0 as isize;
        for j in 0..kf {
            let off_f = (j as isize - cf) * dilation.1 as isize;
            let tap = i * kf + j;
            for t in 0..t_len {
                let ts = t as isize + off_t;
                if ts < 0 || ts >= t_len as isize {
                    continue;
                }
                for fr in 0..f_len {
                    let fs = fr as isize + off_f;
                    if fs < 0 || fs >= f_len as isize {
                        continue;
                    }
                    f(tap, t * f_len + fr, ts as usize * f_len + fs as usize);
                }
            }
        }
    }
}

/// `[a, b, inner] -> [b, a, inner]`.
fn transpose_blocks(src: &[f64], out: &mut [f64], a: usize, b: usize, inner: usize) {
    for i in 0..a {
        for j in 0..b {
            let s = (i * b + j) * inner;
            let d = (j * a + i) * inner;
            out[d..d + inner].copy_from_slice(&src[s..s + inner]);
        }
    }
}

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::math::{exp, ln, softplus_inv, sqrt};
use crate::rng::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Shape constants shared by every Mamba block in a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsmConfig {
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    /// Range of the initial step size `softplus(dt bias)`.
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig { d_state: 16, d_conv: 4, expand: 2, dt_min: 1e-3, dt_max: 1e-1 }
    }
}

impl SsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_state == 0 || self.d_conv == 0 || self.expand == 0 {
            return Err(Error::config("d_state, d_conv and expand must be at least 1"));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::config("need 0 < dt_min <= dt_max"));
        }
        Ok(())
    }

    pub fn dt_rank(d_model: usize) -> usize {
        d_model.div_ceil(16).max(1)
    }
}

/// Weights of one Mamba block. `P` is `Tensor` for stored parameters and
/// `Var` once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaBlockParams<P = Tensor> {
    /// `[d_model, 2·d_inner]`
    pub in_proj: P,
    /// `[d_inner, d_conv]`
    pub conv_w: P,
    /// `[d_inner, dt_rank + 2·d_state]`
    pub x_proj: P,
    /// `[dt_rank, d_inner]`
    pub dt_proj_w: P,
    /// `[d_inner]`
    pub dt_proj_b: P,
    /// `[d_inner, d_state]`; `A = -exp(a_log)`.
    pub a_log: P,
    /// `[d_inner]`
    pub d_skip: P,
    /// `[d_inner, d_model]`
    pub out_proj: P,
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl MambaBlockParams {
    pub fn init(d_model: usize, cfg: &SsmConfig, rng: &mut Rng) -> Self {
        let di = cfg.expand * d_model;
        let ns = cfg.d_state;
        let r = SsmConfig::dt_rank(d_model);
        let fan = |n: usize| 1.0 / sqrt(n as f64);
        let (lo, hi) = (ln(cfg.dt_min), ln(cfg.dt_max));
        let dt_bias = (0..di).map(|_| softplus_inv(exp(rng.uniform(lo, hi)))).collect();
        let a_log = (0..di * ns).map(|i| ln((i % ns + 1) as f64)).collect();
        MambaBlockParams {
            in_proj: uniform(rng, &[d_model, 2 * di], fan(d_model)),
            conv_w: uniform(rng, &[di, cfg.d_conv], fan(cfg.d_conv)),
            x_proj: uniform(rng, &[di, r + 2 * ns], fan(di)),
            dt_proj_w: uniform(rng, &[r, di], fan(r)),
            dt_proj_b: Tensor::new(alloc::vec![di], dt_bias).expect("length di"),
            a_log: Tensor::new(alloc::vec![di, ns], a_log).expect("length di·ns"),
            d_skip: Tensor::full(&[di], 1.0),
            out_proj: uniform(rng, &[di, d_model], fan(di)),
        }
    }

    pub fn d_model(&self) -> usize {
        self.in_proj.shape()[0]
    }

    pub fn d_inner(&self) -> usize {
        self.conv_w.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_proj_w.shape()[0]
    }

    fn check(&self) -> Result<()> {
        let (dm, di, ns, r) = (self.d_model(), self.d_inner(), self.d_state(), self.dt_rank());
        let k = self.conv_w.shape().get(1).copied().unwrap_or(0);
        let want: [(&str, &Tensor, Vec<usize>); 8] = [
            ("in_proj", &self.in_proj, alloc::vec![dm, 2 * di]),
            ("conv_w", &self.conv_w, alloc::vec![di, k]),
            ("x_proj", &self.x_proj, alloc::vec![di, r + 2 * ns]),
            ("dt_proj_w", &self.dt_proj_w, alloc::vec![r, di]),
            ("dt_proj_b", &self.dt_proj_b, alloc::vec![di]),
            ("a_log", &self.a_log, alloc::vec![di, ns]),
            ("d_skip", &self.d_skip, alloc::vec![di]),
            ("out_proj", &self.out_proj, alloc::vec![di, dm]),
        ];
        for (name, t, shape) in want {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

impl<P> MambaBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> MambaBlockParams<Q> {
        MambaBlockParams {
            in_proj: f(&join(prefix, "in_proj"), &self.in_proj),
            conv_w: f(&join(prefix, "conv_w"), &self.conv_w),
            x_proj: f(&join(prefix, "x_proj"), &self.x_proj),
            dt_proj_w: f(&join(prefix, "dt_proj_w"), &self.dt_proj_w),
            dt_proj_b: f(&join(prefix, "dt_proj_b"), &self.dt_proj_b),
            a_log: f(&join(prefix, "a_log"), &self.a_log),
            d_skip: f(&join(prefix, "d_skip"), &self.d_skip),
            out_proj: f(&join(prefix, "out_proj"), &self.out_proj),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "in_proj"), &mut self.in_proj);
        f(&join(prefix, "conv_w"), &mut self.conv_w);
        f(&join(prefix, "x_proj"), &mut self.x_proj);
        f(&join(prefix, "dt_proj_w"), &mut self.dt_proj_w);
        f(&join(prefix, "dt_proj_b"), &mut self.dt_proj_b);
        f(&join(prefix, "a_log"), &mut self.a_log);
        f(&join(prefix, "d_skip"), &mut self.d_skip);
        f(&join(prefix, "out_proj"), &mut self.out_proj);
    }
}

/// Forward/backward pair with a merge projection. Without a backward
/// branch (causal use) the forward output is returned as is and `merge`
/// is absent.
#[derive(Clone, Debug, PartialEq)]
pub struct BidiParams<P = Tensor> {
    pub fwd: MambaBlockParams<P>,
    pub bwd: Option<MambaBlockParams<P>>,
    /// `[2·d_model, d_model]`
    pub merge: Option<P>,
}

impl BidiParams {
    pub fn init(d_model: usize, cfg: &SsmConfig, causal: bool, rng: &mut Rng) -> Self {
        let fwd = MambaBlockParams::init(d_model, cfg, rng);
        if causal {
            return BidiParams { fwd, bwd: None, merge: None };
        }
        let bwd = MambaBlockParams::init(d_model, cfg, rng);
        let merge = uniform(rng, &[2 * d_model, d_model], 1.0 / sqrt((2 * d_model) as f64));
        BidiParams { fwd, bwd: Some(bwd), merge: Some(merge) }
    }
}

impl<P> BidiParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> BidiParams<Q> {
        BidiParams {
            fwd: self.fwd.map(&join(prefix, "fwd"), f),
            bwd: self.bwd.as_ref().map(|b| b.map(&join(prefix, "bwd"), f)),
            merge: self.merge.as_ref().map(|m| f(&join(prefix, "merge"), m)),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        self.fwd.for_each_mut(&join(prefix, "fwd"), f);
        if let Some(b) = self.bwd.as_mut() {
            b.for_each_mut(&join(prefix, "bwd"), f);
        }
        if let Some(m) = self.merge.as_mut() {
            f(&join(prefix, "merge"), m);
        }
    }
}

/// Pre-norm residual time block followed by a pre-norm residual frequency
/// block.
#[derive(Clone, Debug, PartialEq)]
pub struct TfBlockParams<P = Tensor> {
    pub time_norm_g: P,
    pub time_norm_b: P,
    pub time: BidiParams<P>,
    pub freq_norm_g: P,
    pub freq_norm_b: P,
    pub freq: BidiParams<P>,
}

impl TfBlockParams {
    /// `causal` drops the backward branch of the time block only; the
    /// frequency axis has no notion of causality.
    pub fn init(d_model: usize, cfg: &SsmConfig, causal: bool, rng: &mut Rng) -> Self {
        TfBlockParams {
            time_norm_g: Tensor::full(&[d_model], 1.0),
            time_norm_b: Tensor::zeros(&[d_model]),
            time: BidiParams::init(d_model, cfg, causal, rng),
            freq_norm_g: Tensor::full(&[d_model], 1.0),
            freq_norm_b: Tensor::zeros(&[d_model]),
            freq: BidiParams::init(d_model, cfg, false, rng),
        }
    }

    /// Zeroes every output projection so the block reduces to its residual
    /// path.
    pub fn zero_outputs(&mut self) {
        for b in [&mut self.time, &mut self.freq] {
            zero(&mut b.fwd.out_proj);
            if let Some(bw) = b.bwd.as_mut() {
                zero(&mut bw.out_proj);
            }
        }
    }
}

fn zero(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = 0.0);
}

impl<P> TfBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> TfBlockParams<Q> {
        TfBlockParams {
            time_norm_g: f(&join(prefix, "time_norm_g"), &self.time_norm_g),
            time_norm_b: f(&join(prefix, "time_norm_b"), &self.time_norm_b),
            time: self.time.map(&join(prefix, "time"), f),
            freq_norm_g: f(&join(prefix, "freq_norm_g"), &self.freq_norm_g),
            freq_norm_b: f(&join(prefix, "freq_norm_b"), &self.freq_norm_b),
            freq: self.freq.map(&join(prefix, "freq"), f),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "time_norm_g"), &mut self.time_norm_g);
        f(&join(prefix, "time_norm_b"), &mut self.time_norm_b);
        self.time.for_each_mut(&join(prefix, "time"), f);
        f(&join(prefix, "freq_norm_g"), &mut self.freq_norm_g);
        f(&join(prefix, "freq_norm_b"), &mut self.freq_norm_b);
        self.freq.for_each_mut(&join(prefix, "freq"), f);
    }
}

// ---- tape versions ---------------------------------------------------

/// Mamba block over `x: [batch, len, d_model]`.
pub fn mamba_tape(tape: &mut Tape, x: Var, p: &MambaBlockParams<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape(format!("mamba block input must be [batch, len >= 1, d_model], got {shape:?}")));
    }
    let di = tape.shape(p.conv_w)[0];
    let r = tape.shape(p.dt_proj_w)[0];
    let ns = tape.shape(p.a_log)[1];

    let xz = tape.matmul(x, p.in_proj)?;
    let u = tape.slice(xz, 2, 0, di)?;
    let z = tape.slice(xz, 2, di, di)?;
    let u = tape.conv1d_depthwise(u, p.conv_w)?;
    let u = tape.silu(u)?;

    let proj = tape.matmul(u, p.x_proj)?;
    let dt = tape.slice(proj, 2, 0, r)?;
    let b = tape.slice(proj, 2, r, ns)?;
    let c = tape.slice(proj, 2, r + ns, ns)?;
    let dt = tape.matmul(dt, p.dt_proj_w)?;
    let dt = tape.add(dt, p.dt_proj_b)?;
    let delta = tape.softplus(dt)?;
    let a = tape.exp(p.a_log)?;
    let a = tape.neg(a)?;

    let y = tape.scan(u, delta, b, c, a, p.d_skip)?;
    let gate = tape.silu(z)?;
    let y = tape.mul(y, gate)?;
    tape.matmul(y, p.out_proj)
}

/// Bidirectional Mamba along axis 1 of `x: [batch, len, d_model]`.
pub fn bidi_tape(tape: &mut Tape, x: Var, p: &BidiParams<Var>) -> Result<Var> {
    let f = mamba_tape(tape, x, &p.fwd)?;
    let (Some(bwd), Some(merge)) = (p.bwd.as_ref(), p.merge) else {
        return Ok(f);
    };
    let xr = tape.reverse(x, 1)?;
    let br = mamba_tape(tape, xr, bwd)?;
    let b = tape.reverse(br, 1)?;
    let cat = tape.concat(&[f, b], 2)?;
    tape.matmul(cat, merge)
}

/// Time-frequency block over `x: [T, F, d_model]`.
pub fn tf_block_tape(tape: &mut Tape, x: Var, p: &TfBlockParams<Var>) -> Result<Var> {
    if tape.shape(x).len() != 3 {
        return Err(Error::shape("tf block input must be [T, F, d_model]"));
    }
    let n = tape.layer_norm(x, p.time_norm_g, p.time_norm_b, LAYER_NORM_EPS)?;
    let nt = tape.transpose01(n)?;
    let yt = bidi_tape(tape, nt, &p.time)?;
    let y = tape.transpose01(yt)?;
    let x = tape.add(x, y)?;

    let n = tape.layer_norm(x, p.freq_norm_g, p.freq_norm_b, LAYER_NORM_EPS)?;
    let y = bidi_tape(tape, n, &p.freq)?;
    tape.add(x, y)
}

// ---- plain-value wrappers -------------------------------------------

fn bind(tape: &mut Tape) -> impl FnMut(&str, &Tensor) -> Var + '_ {
    move |_, t| tape.constant(t.clone())
}

fn with_batch(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [l, d] => x.clone().reshape(&[1, *l, *d]),
        [_, _, _] => Ok(x.clone()),
        s => Err(Error::shape(format!("expected [len, d_model] or [batch, len, d_model], got {s:?}"))),
    }
}

/// Mamba block on `x: [len, d_model]` (or `[batch, len, d_model]`).
pub fn mamba_block_forward(x: &Tensor, p: &MambaBlockParams) -> Result<Tensor> {
    p.check()?;
    let xb = with_batch(x)?;
    if xb.shape()[2] != p.d_model() {
        return Err(Error::shape(format!("input width {} vs d_model {}", xb.shape()[2], p.d_model())));
    }
    let mut tape = Tape::new();
    let pv = p.map("", &mut bind(&mut tape));
    let xv = tape.constant(xb);
    let y = mamba_tape(&mut tape, xv, &pv)?;
    tape.value(y).clone().reshape(x.shape())
}

/// `merge · concat(mamba_fwd(x), reverse(mamba_bwd(reverse(x))))`.
pub fn bidirectional_mamba(
    x: &Tensor,
    fwd: &MambaBlockParams,
    bwd: &MambaBlockParams,
    merge: &Tensor,
) -> Result<Tensor> {
    fwd.check()?;
    bwd.check()?;
    let dm = fwd.d_model();
    if merge.shape() != [2 * dm, dm] || bwd.d_model() != dm {
        return Err(Error::shape("merge must be [2·d_model, d_model] and both directions share d_model"));
    }
    let p = BidiParams { fwd: fwd.clone(), bwd: Some(bwd.clone()), merge: Some(merge.clone()) };
    let xb = with_batch(x)?;
    let mut tape = Tape::new();
    let pv = p.map("", &mut bind(&mut tape));
    let xv = tape.constant(xb);
    let y = bidi_tape(&mut tape, xv, &pv)?;
    tape.value(y).clone().reshape(x.shape())
}

/// Batch rows processed per tape by [`tf_block_forward`], in units of
/// `batch × len` positions.
pub const INFERENCE_CHUNK_POSITIONS: usize = 8192;

fn eval_on_tape(inputs: &[&Tensor], f: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let y = f(&mut tape, &vars)?;
    Ok(tape.value(y).clone())
}

/// [`bidi_tape`] over `x: [batch, len, d_model]`, a few batch rows at a
/// time. Rows never interact, so only the peak memory changes.
fn bidi_forward_chunked(x: &Tensor, p: &BidiParams) -> Result<Tensor> {
    let &[batch, len, d] = x.shape() else {
        return Err(Error::shape(format!("expected [batch, len, d_model], got {:?}", x.shape())));
    };
    let per = (INFERENCE_CHUNK_POSITIONS / len.max(1)).max(1);
    let mut out = Vec::with_capacity(x.numel());
    let mut width = d;
    for start in (0..batch).step_by(per) {
        let n = per.min(batch - start);
        let chunk = Tensor::new(alloc::vec![n, len, d], x.data()[start * len * d..(start + n) * len * d].to_vec())?;
        let mut tape = Tape::new();
        let pv = p.map("", &mut bind(&mut tape));
        let xv = tape.constant(chunk);
        let y = bidi_tape(&mut tape, xv, &pv)?;
        width = tape.shape(y)[2];
        out.extend_from_slice(tape.value(y).data());
    }
    Tensor::new(alloc::vec![batch, len, width], out)
}

/// Time-frequency block on `x: [T, F, d_model]`. Same arithmetic as
/// [`tf_block_tape`] but without keeping every intermediate alive.
pub fn tf_block_forward(x: &Tensor, p: &TfBlockParams) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[0] == 0 || x.shape()[1] == 0 {
        return Err(Error::shape(format!("tf block input must be [T>=1, F>=1, d_model], got {:?}", x.shape())));
    }
    let norm = |x: &Tensor, g: &Tensor, b: &Tensor| {
        eval_on_tape(&[x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS))
    };
    let transpose = |x: &Tensor| eval_on_tape(&[x], |t, v| t.transpose01(v[0]));
    let add = |a: &Tensor, b: &Tensor| eval_on_tape(&[a, b], |t, v| t.add(v[0], v[1]));

    let n = transpose(&norm(x, &p.time_norm_g, &p.time_norm_b)?)?;
    let y = transpose(&bidi_forward_chunked(&n, &p.time)?)?;
    let x = add(x, &y)?;
    let n = norm(&x, &p.freq_norm_g, &p.freq_norm_b)?;
    let y = bidi_forward_chunked(&n, &p.freq)?;
    add(&x, &y)
}

//! The enhancement network: magnitude/phase/visual feature encoder, a stack
//! of time-frequency Mamba blocks, a bounded magnitude-mask decoder and a
//! phase decoder, with waveform reconstruction by inverse STFT.

mod config;
mod visual;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use config::{MaskActivation, ModelConfig, MAX_ALIGNMENT_DENOMINATOR};
pub use visual::{
    align_tape, align_visual, interpolation_matrix, stub_visual_encoder, visual_features_tape, EmbeddingSource,
    VideoFrames, VisualEmbeddingSequence, VisualParams, STUB_POOL,
};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{AudioBuffer, Spectrogram, StftPlan};
use crate::error::{Error, Result};
use crate::math::{atan2, cos, powf, sin, sqrt, PI};
use crate::rng::Rng;
use crate::ssm::{tf_block_forward, tf_block_tape, TfBlockParams};

/// Audio feature planes: compressed magnitude, cos φ, sin φ.
pub const AUDIO_CHANNELS: usize = 3;

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-bound, bound)).collect()).expect("sized")
}

/// Pointwise convolution followed by a 3×3 convolution dilated along
/// frequency, both SiLU-activated, summed residually.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<P = Tensor> {
    /// `[1, 1, in_channels, d_model]`
    pub w1: P,
    pub b1: P,
    /// `[3, 3, d_model, d_model]`
    pub w2: P,
    pub b2: P,
}

/// 3×3 convolution + SiLU, then a pointwise projection to `out` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<P = Tensor> {
    /// `[3, 3, d_model, d_model]`
    pub w1: P,
    pub b1: P,
    /// `[1, 1, d_model, out]`
    pub w2: P,
    pub b2: P,
}

impl DecoderParams {
    fn init(d: usize, out: usize, rng: &mut Rng) -> Self {
        DecoderParams {
            w1: uniform(rng, &[3, 3, d, d], 1.0 / sqrt((9 * d) as f64)),
            b1: Tensor::zeros(&[d]),
            w2: uniform(rng, &[1, 1, d, out], 1.0 / sqrt(d as f64)),
            b2: Tensor::zeros(&[out]),
        }
    }
}

macro_rules! four_field_map {
    ($ty:ident, $($f:ident),+) => {
        impl<P> $ty<P> {
            pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> $ty<Q> {
                $ty { $($f: f(&format!("{prefix}.{}", stringify!($f)), &self.$f)),+ }
            }

            pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
                $(f(&format!("{prefix}.{}", stringify!($f)), &mut self.$f);)+
            }
        }
    };
}

four_field_map!(EncoderParams, w1, b1, w2, b2);
four_field_map!(DecoderParams, w1, b1, w2, b2);

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P = Tensor> {
    pub visual: Option<VisualParams<P>>,
    pub encoder: EncoderParams<P>,
    pub blocks: Vec<TfBlockParams<P>>,
    pub mag_decoder: DecoderParams<P>,
    pub phase_decoder: DecoderParams<P>,
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        ModelParams {
            visual: self.visual.as_ref().map(|v| v.map("visual", f)),
            encoder: self.encoder.map("encoder", f),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("blocks.{i}"), f))
                .collect(),
            mag_decoder: self.mag_decoder.map("mag_decoder", f),
            phase_decoder: self.phase_decoder.map("phase_decoder", f),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&str, &mut P)) {
        if let Some(v) = self.visual.as_mut() {
            v.for_each_mut("visual", f);
        }
        self.encoder.for_each_mut("encoder", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_mut(&format!("blocks.{i}"), f);
        }
        self.mag_decoder.for_each_mut("mag_decoder", f);
        self.phase_decoder.for_each_mut("phase_decoder", f);
    }

    pub fn for_each(&self, f: &mut impl FnMut(&str, &P)) {
        self.map(&mut |name, p| f(name, p));
    }
}

impl ModelParams {
    /// Audio-path weights come from one random stream and visual-path
    /// weights (including the encoder's visual input rows) from another, so
    /// toggling `use_visual` leaves every shared weight unchanged.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = Rng::stream(cfg.seed, "model");
        let mut vrng = Rng::stream(cfg.seed, "model-visual");
        let d = cfg.d_model;
        let vc = if cfg.use_visual { cfg.visual_channels } else { 0 };

        let visual = cfg.use_visual.then(|| VisualParams::init(cfg, &mut vrng));
        let audio_rows = uniform(&mut rng, &[AUDIO_CHANNELS, d], 1.0 / sqrt(AUDIO_CHANNELS as f64));
        let mut w1 = audio_rows.into_data();
        if vc > 0 {
            let rows = uniform(&mut vrng, &[vc, d], 1.0 / sqrt(vc as f64));
            w1.extend_from_slice(rows.data());
        }
        let encoder = EncoderParams {
            w1: Tensor::new(vec![1, 1, AUDIO_CHANNELS + vc, d], w1).expect("sized"),
            b1: Tensor::zeros(&[d]),
            w2: uniform(&mut rng, &[3, 3, d, d], 1.0 / sqrt((9 * d) as f64)),
            b2: Tensor::zeros(&[d]),
        };
        let ssm = cfg.ssm();
        let blocks = (0..cfg.n_tf_blocks)
            .map(|_| TfBlockParams::init(d, &ssm, cfg.causal, &mut rng))
            .collect();
        let mag_decoder = DecoderParams::init(d, 1, &mut rng);
        let phase_decoder = DecoderParams::init(d, 2, &mut rng);
        ModelParams { visual, encoder, blocks, mag_decoder, phase_decoder }
    }

    pub fn named(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.for_each(&mut |name, t| {
            out.insert(String::from(name), t.clone());
        });
        out
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.numel());
        n
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TapeOutput {
    /// Enhanced waveform, `[len]`.
    pub wave: Var,
    /// Predicted complex spectrogram, `[2, T, F]`.
    pub spec: Var,
    /// Magnitude mask, `[T, F]`.
    pub mask: Var,
    /// Predicted phase, `[T, F]`.
    pub phase: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub enhanced: AudioBuffer,
    pub spec: Spectrogram,
    pub mask: Vec<f64>,
    /// In `(-π, π]`.
    pub phase: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    plan: StftPlan,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        let plan = StftPlan::new(&config.stft)?;
        Ok(Model { config, params, plan })
    }

    /// Rebuilds a model from named tensors; the name set and every shape must
    /// match what `config` implies.
    pub fn from_named(config: ModelConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut model = Model::new(config)?;
        let mut problem = None;
        model.params.for_each_mut(&mut |name, slot| {
            if problem.is_some() {
                return;
            }
            match named.remove(name) {
                None => problem = Some(Error::shape(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != slot.shape() => {
                    problem = Some(Error::shape(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )))
                }
                Some(t) => *slot = t,
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::shape(format!("unexpected parameter `{extra}`")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn named_params(&self) -> BTreeMap<String, Tensor> {
        self.params.named()
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    /// Puts every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelParams<Var> {
        self.params.map(&mut |_, t| tape.leaf(t.clone(), trainable))
    }

    /// Zeroes the last layer of both decoders: the mask becomes exactly 1
    /// and the phase passes through.
    pub fn set_identity_decoders(&mut self) {
        for dec in [&mut self.params.mag_decoder, &mut self.params.phase_decoder] {
            dec.w2.data_mut().iter_mut().for_each(|v| *v = 0.0);
            dec.b2.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Zeroes the visual projection so the visual planes are identically 0.
    pub fn zero_visual_projection(&mut self) {
        if let Some(v) = self.params.visual.as_mut() {
            v.proj.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn check_visual<'a>(&self, visual: Option<&'a VisualEmbeddingSequence>) -> Result<Option<&'a VisualEmbeddingSequence>> {
        if !self.config.use_visual {
            return Ok(None);
        }
        let v = visual.ok_or_else(|| Error::config("visual embeddings are required when use_visual is true"))?;
        if v.dim != self.config.visual_dim {
            return Err(Error::shape(format!(
                "visual embeddings have dim {}, model expects {}",
                v.dim, self.config.visual_dim
            )));
        }
        Ok(Some(v))
    }

    /// Spectral analysis of the noisy input and the audio feature planes.
    fn analyze_input(&self, noisy: &[f64]) -> Result<Analysis> {
        if noisy.is_empty() {
            return Err(Error::EmptyInput);
        }
        let c = self.config.stft.compression_exponent;
        let bins = self.config.stft.bins();
        let (frames, re, im) = self.plan.analyze(noisy);
        let cells = frames * bins;
        let mut feat = vec![0.0; cells * AUDIO_CHANNELS];
        let mut mag_c = vec![0.0; cells];
        let mut cos_phi = vec![0.0; cells];
        let mut sin_phi = vec![0.0; cells];
        for i in 0..cells {
            let m = sqrt(re[i] * re[i] + im[i] * im[i]);
            let phi = atan2(im[i], re[i]);
            mag_c[i] = powf(m, c);
            cos_phi[i] = cos(phi);
            sin_phi[i] = sin(phi);
            feat[i * AUDIO_CHANNELS] = mag_c[i];
            feat[i * AUDIO_CHANNELS + 1] = cos_phi[i];
            feat[i * AUDIO_CHANNELS + 2] = sin_phi[i];
        }
        let grid = vec![frames, bins];
        Ok(Analysis {
            feat: Tensor::new(vec![frames, bins, AUDIO_CHANNELS], feat)?,
            mag_c: Tensor::new(grid.clone(), mag_c)?,
            cos_phi: Tensor::new(grid.clone(), cos_phi)?,
            sin_phi: Tensor::new(grid, sin_phi)?,
            out_len: noisy.len(),
        })
    }

    /// Visual fusion and the feature encoder; `[T, F, d_model]`.
    fn encode_tape(
        &self,
        tape: &mut Tape,
        p: &ModelParams<Var>,
        feat: &Tensor,
        visual: Option<&VisualEmbeddingSequence>,
    ) -> Result<Var> {
        let frames = feat.shape()[0];
        let mut x = tape.constant(feat.clone());
        if let (Some(v), Some(vp)) = (visual, p.visual.as_ref()) {
            let planes = visual_features_tape(tape, v, frames, &self.config, vp)?;
            x = tape.concat(&[x, planes], 2)?;
        }
        let e = &p.encoder;
        let h = tape.conv2d(x, e.w1, (1, 1))?;
        let h = tape.add(h, e.b1)?;
        let h1 = tape.silu(h)?;
        let h = tape.conv2d(h1, e.w2, (1, 2))?;
        let h = tape.add(h, e.b2)?;
        let h2 = tape.silu(h)?;
        tape.add(h1, h2)
    }

    /// Both decoders, recombination and synthesis.
    fn decode_tape(&self, tape: &mut Tape, p: &ModelParams<Var>, x: Var, a: Analysis) -> Result<TapeOutput> {
        let c = self.config.stft.compression_exponent;
        let grid = a.mag_c.shape().to_vec();
        let (frames, bins) = (grid[0], grid[1]);

        let m = decoder_tape(tape, x, &p.mag_decoder)?;
        let m = tape.reshape(m, &grid)?;
        let m = tape.sigmoid(m)?;
        let mask = match self.config.mask_activation {
            MaskActivation::BoundedSigmoid2x => tape.scale(m, 2.0)?,
        };
        let mag_c = tape.constant(a.mag_c);
        let mag_c_enh = tape.mul(mask, mag_c)?;

        let q = decoder_tape(tape, x, &p.phase_decoder)?;
        let dr = tape.slice(q, 2, 0, 1)?;
        let dr = tape.reshape(dr, &grid)?;
        let di = tape.slice(q, 2, 1, 1)?;
        let di = tape.reshape(di, &grid)?;
        let cos_phi = tape.constant(a.cos_phi);
        let sin_phi = tape.constant(a.sin_phi);
        let r = tape.add(cos_phi, dr)?;
        let i = tape.add(sin_phi, di)?;
        let phase = tape.atan2(i, r)?;

        let mag = tape.pow(mag_c_enh, 1.0 / c)?;
        let cp = tape.cos(phase)?;
        let sp = tape.sin(phase)?;
        let sr = tape.mul(mag, cp)?;
        let si = tape.mul(mag, sp)?;
        let sr = tape.reshape(sr, &[1, frames, bins])?;
        let si = tape.reshape(si, &[1, frames, bins])?;
        let spec = tape.concat(&[sr, si], 0)?;
        let wave = tape.istft(spec, &self.plan, a.out_len)?;
        Ok(TapeOutput { wave, spec, mask, phase })
    }

    /// Records the network on `tape` using `p` (from [`Model::bind`]).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        p: &ModelParams<Var>,
        noisy: &[f64],
        visual: Option<&VisualEmbeddingSequence>,
    ) -> Result<TapeOutput> {
        let visual = self.check_visual(visual)?;
        let a = self.analyze_input(noisy)?;
        let mut x = self.encode_tape(tape, p, &a.feat, visual)?;
        for b in &p.blocks {
            x = tf_block_tape(tape, x, b)?;
        }
        self.decode_tape(tape, p, x, a)
    }

    /// Inference without gradient tracking. Computes the same network as
    /// [`Model::forward_tape`] in stages so that intermediate values of one
    /// stage are released before the next.
    pub fn forward(&self, noisy: &AudioBuffer, visual: Option<&VisualEmbeddingSequence>) -> Result<ModelOutput> {
        if noisy.sample_rate != self.config.sample_rate {
            return Err(Error::config(format!(
                "audio is {} Hz, model expects {} Hz",
                noisy.sample_rate, self.config.sample_rate
            )));
        }
        let visual = self.check_visual(visual)?;
        let a = self.analyze_input(&noisy.samples)?;
        let mut x = {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let x = self.encode_tape(&mut tape, &p, &a.feat, visual)?;
            tape.value(x).clone()
        };
        for b in &self.params.blocks {
            x = tf_block_forward(&x, b)?;
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x);
        let out = self.decode_tape(&mut tape, &p, xv, a)?;
        let spec_t = tape.value(out.spec);
        let (frames, bins) = (spec_t.shape()[1], spec_t.shape()[2]);
        let half = frames * bins;
        let spec = Spectrogram {
            frames,
            bins,
            real: spec_t.data()[..half].to_vec(),
            imag: spec_t.data()[half..].to_vec(),
        };
        let phase = tape
            .value(out.phase)
            .data()
            .iter()
            .map(|&p| if p <= -PI { PI } else { p })
            .collect();
        Ok(ModelOutput {
            enhanced: AudioBuffer::new(tape.value(out.wave).data().to_vec(), noisy.sample_rate)?,
            spec,
            mask: tape.value(out.mask).data().to_vec(),
            phase,
        })
    }
}

/// Noisy-input planes shared by the encoder and the decoders.
struct Analysis {
    /// `[T, F, AUDIO_CHANNELS]`
    feat: Tensor,
    mag_c: Tensor,
    cos_phi: Tensor,
    sin_phi: Tensor,
    out_len: usize,
}

fn decoder_tape(tape: &mut Tape, x: Var, p: &DecoderParams<Var>) -> Result<Var> {
    let h = tape.conv2d(x, p.w1, (1, 1))?;
    let h = tape.add(h, p.b1)?;
    let h = tape.silu(h)?;
    let h = tape.conv2d(h, p.w2, (1, 1))?;
    tape.add(h, p.b2)
}

/// Free-function form of [`Model::forward`].
pub fn forward(noisy: &AudioBuffer, visual: Option<&VisualEmbeddingSequence>, model: &Model) -> Result<ModelOutput> {
    model.forward(noisy, visual)
}

//! Visual stream: embedding sequences, the frozen stand-in encoder and
//! alignment of 25 fps embeddings onto the STFT frame grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    PrecomputedFile,
    StubEncoder,
}

/// One embedding vector per video frame, row-major `frames × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualEmbeddingSequence {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub source: EmbeddingSource,
}

impl VisualEmbeddingSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>, source: EmbeddingSource) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::EmptyInput);
        }
        if data.len() != frames * dim {
            return Err(Error::shape(format!("{} values for {frames} frames × {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("visual embeddings must be finite"));
        }
        Ok(VisualEmbeddingSequence { frames, dim, data, source })
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }
}

/// Raw video, row-major `frames × height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrames {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl VideoFrames {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::shape("video data must be frames × height × width × channels"));
        }
        Ok(VideoFrames { frames, height, width, channels, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        VideoFrames { frames, height, width, channels, data: vec![0.0; frames * height * width * channels] }
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Temporal window of the stand-in encoder's average pool.
pub const STUB_POOL: usize = 3;

/// Deterministic stand-in for a pretrained spatiotemporal encoder: a seeded
/// random projection of each flattened frame plus a zero-mean bias,
/// followed by a centered temporal average pool. Its output is used as
/// tape constants and therefore never trained. Returns `None` when there is
/// no video (audio-only operation).
pub fn stub_visual_encoder(video: Option<&VideoFrames>, dim: usize, seed: u64) -> Option<VisualEmbeddingSequence> {
    let video = video?;
    if video.frames == 0 || dim == 0 {
        return None;
    }
    let px = video.pixels_per_frame();
    let mut rng = Rng::stream(seed, "stub-visual-encoder");
    let scale = 1.0 / sqrt(px.max(1) as f64);
    let proj: Vec<f64> = (0..px * dim).map(|_| rng.normal() * scale).collect();
    let mut bias: Vec<f64> = (0..dim).map(|_| 0.1 * rng.normal()).collect();
    let mean = bias.iter().sum::<f64>() / dim as f64;
    bias.iter_mut().for_each(|b| *b -= mean);

    let mut raw = vec![0.0; video.frames * dim];
    for v in 0..video.frames {
        let frame = &video.data[v * px..(v + 1) * px];
        let out = &mut raw[v * dim..(v + 1) * dim];
        out.copy_from_slice(&bias);
        for (i, &x) in frame.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&proj[i * dim..(i + 1) * dim]) {
                *o += x * w;
            }
        }
    }
    let half = STUB_POOL / 2;
    let mut pooled = vec![0.0; raw.len()];
    for v in 0..video.frames {
        let lo = v.saturating_sub(half);
        let hi = (v + half + 1).min(video.frames);
        let n = (hi - lo) as f64;
        for j in 0..dim {
            pooled[v * dim + j] = (lo..hi).map(|k| raw[k * dim + j]).sum::<f64>() / n;
        }
    }
    Some(VisualEmbeddingSequence { frames: video.frames, dim, data: pooled, source: EmbeddingSource::StubEncoder })
}

/// `[T, V]` linear-interpolation weights placing STFT frame `t` at video
/// position `t · (video fps · hop / sample rate)`. Positions past the last
/// video frame hold it.
pub fn interpolation_matrix(video_frames: usize, stft_frames: usize, cfg: &ModelConfig) -> Tensor {
    let (p, q) = cfg.alignment_ratio();
    let mut m = Tensor::zeros(&[stft_frames, video_frames]);
    let d = m.data_mut();
    for t in 0..stft_frames {
        let num = t as u64 * q;
        let i0 = (num / p) as usize;
        let frac = (num % p) as f64 / p as f64;
        let row = &mut d[t * video_frames..(t + 1) * video_frames];
        if i0 + 1 >= video_frames {
            row[video_frames - 1] = 1.0;
        } else {
            row[i0] = 1.0 - frac;
            if frac > 0.0 {
                row[i0 + 1] = frac;
            }
        }
    }
    m
}

/// Learned parts of the visual path.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualParams<P = Tensor> {
    /// Kernel-3 temporal convolution, `[3, 1, visual_dim, visual_dim]`.
    pub conv_w: P,
    /// `[visual_dim]`
    pub conv_b: P,
    /// `[visual_dim, visual_channels]`
    pub proj: P,
    /// Per-bin scale applied when tiling across frequency, `[F, visual_channels]`.
    pub freq_scale: P,
}

impl VisualParams {
    /// The temporal convolution starts as the identity.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let dv = cfg.visual_dim;
        let vc = cfg.visual_channels;
        let mut conv_w = Tensor::zeros(&[3, 1, dv, dv]);
        for i in 0..dv {
            conv_w.data_mut()[dv * dv + i * dv + i] = 1.0;
        }
        let bound = 1.0 / sqrt(dv as f64);
        let proj = (0..dv * vc).map(|_| rng.uniform(-bound, bound)).collect();
        VisualParams {
            conv_w,
            conv_b: Tensor::zeros(&[dv]),
            proj: Tensor::new(vec![dv, vc], proj).expect("dv·vc values"),
            freq_scale: Tensor::full(&[cfg.stft.bins(), vc], 1.0),
        }
    }
}

impl<P> VisualParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> VisualParams<Q> {
        VisualParams {
            conv_w: f(&format!("{prefix}.conv_w"), &self.conv_w),
            conv_b: f(&format!("{prefix}.conv_b"), &self.conv_b),
            proj: f(&format!("{prefix}.proj"), &self.proj),
            freq_scale: f(&format!("{prefix}.freq_scale"), &self.freq_scale),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.conv_w"), &mut self.conv_w);
        f(&format!("{prefix}.conv_b"), &mut self.conv_b);
        f(&format!("{prefix}.proj"), &mut self.proj);
        f(&format!("{prefix}.freq_scale"), &mut self.freq_scale);
    }
}

/// Interpolation to the STFT frame grid followed by the temporal
/// convolution; `[T, visual_dim]`.
pub fn align_tape(
    tape: &mut Tape,
    v: &VisualEmbeddingSequence,
    stft_frames: usize,
    cfg: &ModelConfig,
    p: &VisualParams<Var>,
) -> Result<Var> {
    if v.dim != cfg.visual_dim {
        return Err(Error::shape(format!("visual embeddings have dim {}, model expects {}", v.dim, cfg.visual_dim)));
    }
    if stft_frames == 0 {
        return Err(Error::EmptyInput);
    }
    let m = tape.constant(interpolation_matrix(v.frames, stft_frames, cfg));
    let e = tape.constant(Tensor::new(vec![v.frames, v.dim], v.data.clone())?);
    let a = tape.matmul(m, e)?;
    let a = tape.reshape(a, &[stft_frames, 1, v.dim])?;
    let c = tape.conv2d(a, p.conv_w, (1, 1))?;
    let c = tape.reshape(c, &[stft_frames, v.dim])?;
    tape.add(c, p.conv_b)
}

/// Visual feature planes `[T, F, visual_channels]` fed to the encoder.
pub fn visual_features_tape(
    tape: &mut Tape,
    v: &VisualEmbeddingSequence,
    stft_frames: usize,
    cfg: &ModelConfig,
    p: &VisualParams<Var>,
) -> Result<Var> {
    let aligned = align_tape(tape, v, stft_frames, cfg, p)?;
    let projected = tape.matmul(aligned, p.proj)?;
    tape.outer_tile(projected, p.freq_scale)
}

/// Plain-value [`align_tape`].
pub fn align_visual(
    v: &VisualEmbeddingSequence,
    stft_frames: usize,
    cfg: &ModelConfig,
    p: &VisualParams,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let pv = p.map("visual", &mut |_, t| tape.constant(t.clone()));
    let y = align_tape(&mut tape, v, stft_frames, cfg, &pv)?;
    Ok(tape.value(y).clone())
}

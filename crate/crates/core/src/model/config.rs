use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::ssm::SsmConfig;

/// Largest reduced denominator accepted for the audio/video frame-rate
/// ratio.
pub const MAX_ALIGNMENT_DENOMINATOR: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    /// `2·sigmoid(x)`, bounded to `(0, 2)`.
    #[default]
    BoundedSigmoid2x,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub d_model: usize,
    pub n_tf_blocks: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    /// Width of one embedding vector per video frame.
    pub visual_dim: usize,
    pub visual_fps: u32,
    /// Channels the aligned visual vector is projected to before being
    /// tiled across frequency.
    pub visual_channels: usize,
    pub use_visual: bool,
    pub mask_activation: MaskActivation,
    /// Drops the backward branch of every time-axis Mamba block.
    pub causal: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stft: StftConfig::default(),
            sample_rate: 16000,
            d_model: 32,
            n_tf_blocks: 2,
            d_state: 16,
            d_conv: 4,
            expand: 2,
            visual_dim: 64,
            visual_fps: 25,
            visual_channels: 8,
            use_visual: true,
            mask_activation: MaskActivation::BoundedSigmoid2x,
            causal: false,
            seed: 0,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl ModelConfig {
    pub fn ssm(&self) -> SsmConfig {
        SsmConfig {
            d_state: self.d_state,
            d_conv: self.d_conv,
            expand: self.expand,
            ..SsmConfig::default()
        }
    }

    /// STFT frames per video frame as a reduced fraction `(p, q)`.
    pub fn alignment_ratio(&self) -> (u64, u64) {
        let p = self.sample_rate as u64;
        let q = self.stft.hop as u64 * self.visual_fps as u64;
        let g = gcd(p, q).max(1);
        (p / g, q / g)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.ssm().validate()?;
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if self.d_model == 0 {
            return Err(Error::config("d_model must be at least 1"));
        }
        if self.use_visual {
            if self.visual_dim == 0 || self.visual_channels == 0 {
                return Err(Error::config("visual_dim and visual_channels must be at least 1"));
            }
            if self.visual_fps == 0 {
                return Err(Error::config("visual_fps must be positive"));
            }
            let (_, q) = self.alignment_ratio();
            if q > MAX_ALIGNMENT_DENOMINATOR {
                return Err(Error::config(alloc::format!(
                    "visual_fps: STFT frame rate / visual_fps reduces to a fraction with denominator {q} (max {MAX_ALIGNMENT_DENOMINATOR})"
                )));
            }
        }
        Ok(())
    }

    /// Smallest configuration used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            stft: StftConfig { n_fft: 64, hop: 16, win_len: 64, ..StftConfig::default() },
            d_model: 8,
            n_tf_blocks: 1,
            d_state: 4,
            visual_dim: 6,
            visual_channels: 3,
            ..ModelConfig::default()
        }
    }
}

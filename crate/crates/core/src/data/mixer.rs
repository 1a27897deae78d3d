use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log10, powf, sqrt};

/// Frame length (20 ms at 16 kHz) for silence trimming of the target.
pub const SILENCE_FRAME: usize = 320;
/// Frames more than this far below the loudest target frame are silent.
pub const SILENCE_RANGE_DB: f64 = 40.0;
/// Scenes whose peak exceeds this are rescaled as a whole.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    /// Repeat the source until the end of the target.
    #[default]
    Loop,
    /// Play the source once and stop.
    Truncate,
}

/// Where a source starts within the target timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Placement {
    pub start: usize,
    pub mode: PlacementMode,
}

impl Placement {
    /// Target samples covered by a source of `source_len` samples.
    pub fn region(&self, target_len: usize, source_len: usize) -> Range<usize> {
        let start = self.start.min(target_len);
        let end = match self.mode {
            PlacementMode::Loop if source_len > 0 => target_len,
            _ => (start + source_len).min(target_len),
        };
        start..end
    }

    /// The source laid onto a zero timeline of `target_len` samples.
    pub fn lay(&self, source: &[f64], target_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; target_len];
        let r = self.region(target_len, source.len());
        for (k, i) in r.enumerate() {
            out[i] = source[k % source.len()];
        }
        out
    }
}

/// Declarative description of one mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scene_id: String,
    pub target_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_path: Option<String>,
    #[serde(default)]
    pub snr_interferer_db: f64,
    #[serde(default)]
    pub snr_noise_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub interferer_placement: Placement,
    #[serde(default)]
    pub noise_placement: Placement,
    /// Precomputed visual embeddings for the target speaker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_path: Option<String>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scene_id.is_empty() {
            return Err(Error::config("scene_id must not be empty"));
        }
        if self.interferer_path.is_none() && self.noise_path.is_none() {
            return Err(Error::config(alloc::format!(
                "scene `{}` needs an interferer or a noise source",
                self.scene_id
            )));
        }
        if !self.snr_interferer_db.is_finite() || !self.snr_noise_db.is_finite() {
            return Err(Error::config(alloc::format!("scene `{}` has a non-finite SNR", self.scene_id)));
        }
        Ok(())
    }
}

/// Mean square of `target` over `region`, counting only samples in frames
/// within [`SILENCE_RANGE_DB`] of the loudest frame of the whole target.
pub fn active_power(target: &[f64], region: Range<usize>) -> f64 {
    let energies: Vec<f64> = target
        .chunks(SILENCE_FRAME)
        .map(|f| f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64)
        .collect();
    let max = energies.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let floor = max * powf(10.0, -SILENCE_RANGE_DB / 10.0);
    let (mut sum, mut n) = (0.0, 0usize);
    for i in region {
        if energies[i / SILENCE_FRAME] >= floor {
            sum += target[i] * target[i];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn region_power(x: &[f64], region: Range<usize>) -> f64 {
    let n = region.len();
    if n == 0 {
        return 0.0;
    }
    x[region].iter().map(|v| v * v).sum::<f64>() / n as f64
}

/// `10·log10(P_target / P_source)` over `region` with the silence-trimmed
/// target power; `source` is already laid on the target timeline.
pub fn snr_db(target: &[f64], source: &[f64], region: Range<usize>) -> f64 {
    let pt = active_power(target, region.clone());
    let ps = region_power(source, region);
    10.0 * log10(pt / ps)
}

/// One additive source with its requested SNR.
#[derive(Clone, Copy, Debug)]
pub struct MixSource<'a> {
    pub name: &'a str,
    pub samples: &'a [f64],
    pub placement: Placement,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutput {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    /// Each source as it appears in the mixture (after scaling, placement
    /// and any peak rescale), in input order.
    pub stems: Vec<Vec<f64>>,
    /// Linear gain applied to each source before the peak rescale.
    pub gains: Vec<f64>,
    /// Common factor applied to the whole scene (1 when no rescale).
    pub peak_scale: f64,
}

/// Scales every source to its SNR against `target`, sums, and rescales the
/// scene jointly if its peak exceeds [`PEAK_LIMIT`].
pub fn mix_sources(target: &[f64], sources: &[MixSource<'_>]) -> Result<MixOutput> {
    if target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = target.len();
    let mut noisy = target.to_vec();
    let mut stems = Vec::with_capacity(sources.len());
    let mut gains = Vec::with_capacity(sources.len());
    for s in sources {
        if !s.snr_db.is_finite() {
            return Err(Error::config(alloc::format!("SNR for `{}` is not finite", s.name)));
        }
        let laid = s.placement.lay(s.samples, n);
        let region = s.placement.region(n, s.samples.len());
        let ps = region_power(&laid, region.clone());
        if ps == 0.0 {
            return Err(Error::ZeroPowerSource(String::from(s.name)));
        }
        let pt = active_power(target, region);
        if pt == 0.0 {
            return Err(Error::ZeroPowerSource(String::from("target")));
        }
        let g = sqrt(pt / (ps * powf(10.0, s.snr_db / 10.0)));
        let stem: Vec<f64> = laid.iter().map(|v| g * v).collect();
        for (y, v) in noisy.iter_mut().zip(&stem) {
            *y += v;
        }
        stems.push(stem);
        gains.push(g);
    }
    let mut clean = target.to_vec();
    let peak = noisy.iter().chain(&clean).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut peak_scale = 1.0;
    if peak > PEAK_LIMIT {
        peak_scale = PEAK_LIMIT / peak;
        for buf in core::iter::once(&mut noisy).chain(core::iter::once(&mut clean)).chain(stems.iter_mut()) {
            buf.iter_mut().for_each(|v| *v *= peak_scale);
        }
    }
    Ok(MixOutput { noisy, clean, stems, gains, peak_scale })
}

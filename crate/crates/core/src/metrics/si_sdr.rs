use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::math::log10;

/// Reported SI-SDR values are clamped to `±SI_SDR_CAP_DB`.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64> {
    si_sdr_samples(&reference.samples, &estimate.samples)
}

pub fn si_sdr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: estimate.len() });
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let me = estimate.iter().sum::<f64>() / n;
    let (mut ss, mut se) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let (r, e) = (r - mr, e - me);
        ss += r * r;
        se += r * e;
    }
    if ss == 0.0 {
        return Err(Error::ZeroReference);
    }
    let alpha = se / ss;
    let (mut target, mut noise) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let t = alpha * (r - mr);
        let d = (e - me) - t;
        target += t * t;
        noise += d * d;
    }
    let db = if noise == 0.0 {
        SI_SDR_CAP_DB
    } else if target == 0.0 {
        -SI_SDR_CAP_DB
    } else {
        10.0 * log10(target / noise)
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

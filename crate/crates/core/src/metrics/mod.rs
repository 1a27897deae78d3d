//! Intrusive quality measures: STOI and SI-SDR.

mod si_sdr;
mod stoi;

pub use si_sdr::{si_sdr, si_sdr_samples, SI_SDR_CAP_DB};
pub use stoi::{resample_poly_kaiser, stoi, stoi_samples, third_octave_bands, STOI_FS};

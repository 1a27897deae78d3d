//! Audio-visual speech enhancement core.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds with `no_std` + `alloc`: STFT analysis/synthesis, a reverse-mode
//! tape for training, the selective-scan state-space primitive and the
//! bidirectional time-frequency Mamba blocks built from it, the enhancement
//! network, its composite loss, intrusive metrics (STOI, SI-SDR) and the
//! synthetic scene mixer. File formats, the training driver and the CLI live
//! in the `avsm` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod dsp;
pub mod error;
pub mod fft;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};

//! File formats, the training driver and the `avsm` command line around
//! [`avsm_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod train;
pub mod vemb;
pub mod wav;

pub use avsm_core as core;
pub use error::{Error, Result};

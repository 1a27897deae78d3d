//! Scene description, SNR-controlled mixing and deterministic toy source
//! synthesis. File handling lives in the `avsm` crate.

mod mixer;
mod synth;

pub use mixer::{
    active_power, mix_sources, snr_db, MixOutput, MixSource, Placement, PlacementMode, SceneSpec, PEAK_LIMIT,
    SILENCE_FRAME, SILENCE_RANGE_DB,
};
pub use synth::{synthesize_sources, ToyCorpusConfig, ToySources};

//! Selective state-space scan and the Mamba blocks built on it.

mod block;
pub mod scan;

pub use block::{
    bidi_tape, bidirectional_mamba, mamba_block_forward, mamba_tape, tf_block_forward, tf_block_tape,
    BidiParams, MambaBlockParams, SsmConfig, TfBlockParams, LAYER_NORM_EPS,
};
pub use scan::{
    selective_scan_chunked, selective_scan_fast, selective_scan_seq, ScanInputs, DEFAULT_SCAN_CHUNK,
};

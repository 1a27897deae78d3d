//! Visual embedding files: `"VEMB"`, then version, frame count and
//! dimension as little-endian `u32`, then `frames × dim` little-endian `f32`.

use std::path::Path;

use avsm_core::model::{EmbeddingSource, VisualEmbeddingSequence};

use crate::error::{Error, Result};

pub const VEMB_MAGIC: &[u8; 4] = b"VEMB";
pub const VEMB_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_vemb(v: &VisualEmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.data.len());
    out.extend_from_slice(VEMB_MAGIC);
    out.extend_from_slice(&VEMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.frames as u32).to_le_bytes());
    out.extend_from_slice(&(v.dim as u32).to_le_bytes());
    for &x in &v.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_vemb(bytes: &[u8], path: &Path) -> Result<VisualEmbeddingSequence> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != VEMB_MAGIC {
        return Err(Error::corrupt(path, "missing VEMB header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VEMB_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: VEMB_VERSION });
    }
    let (frames, dim) = (word(8) as usize, word(12) as usize);
    let want = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::corrupt(path, "frame count × dim overflows"))?;
    if bytes.len() - HEADER_LEN != want {
        return Err(Error::corrupt(
            path,
            format!("{frames}×{dim} embeddings need {want} payload bytes, found {}", bytes.len() - HEADER_LEN),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VisualEmbeddingSequence::new(frames, dim, data, EmbeddingSource::PrecomputedFile)
        .map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn read_vemb(path: &Path) -> Result<VisualEmbeddingSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vemb(&bytes, path)
}

pub fn write_vemb(path: &Path, v: &VisualEmbeddingSequence) -> Result<()> {
    std::fs::write(path, encode_vemb(v)).map_err(|e| Error::io(path, e))
}

//! Model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "AVSM" | version u32 | step u64 | config_len u32 | config JSON
//! | record_count u32 | records... | crc32 u32
//! record = name_len u32 | name | dtype u8 | rank u32 | dims u32... | payload
//! ```
//!
//! The CRC covers every byte before it. Records are sorted by name, the
//! config is serialized compactly with struct field order, and `f64`
//! payloads are stored bit-exact, so load → save reproduces the file.
//! Optimizer moments, when present, are stored as extra records under
//! `adamw.m.` and `adamw.v.` prefixes.

use std::collections::BTreeMap;
use std::path::Path;

use avsm_core::autodiff::{AdamWState, Tensor};
use avsm_core::model::{Model, ModelConfig};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVSM";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const MOMENT1: &str = "adamw.m.";
const MOMENT2: &str = "adamw.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: Option<AdamWState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, optimizer: Option<&AdamWState>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            step,
            params: model.named_params(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Ok(Model::from_named(self.config, self.params)?)
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::from_named(self.config.clone(), self.params.clone())?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&ck.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut records: BTreeMap<String, (Vec<usize>, &[f64])> = BTreeMap::new();
    for (name, t) in &ck.params {
        if name.starts_with(MOMENT1) || name.starts_with(MOMENT2) {
            return Err(Error::Validation(format!("parameter name `{name}` uses a reserved prefix")));
        }
        records.insert(name.clone(), (t.shape().to_vec(), t.data()));
    }
    if let Some(opt) = &ck.optimizer {
        if opt.step != ck.step {
            return Err(Error::Validation(format!(
                "optimizer step {} differs from checkpoint step {}",
                opt.step, ck.step
            )));
        }
        for (prefix, moments) in [(MOMENT1, &opt.m), (MOMENT2, &opt.v)] {
            for (name, v) in moments {
                records.insert(format!("{prefix}{name}"), (vec![v.len()], v.as_slice()));
            }
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&ck.step.to_le_bytes());
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_u32(&mut out, records.len() as u32);
    for (name, (shape, data)) in &records {
        put_record(&mut out, name, shape, data);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::corrupt(self.path, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < 12 {
        return Err(Error::corrupt(path, "truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::corrupt(path, "checksum mismatch"));
    }
    let mut c = Cursor { bytes: body, pos: 8, path };
    let step = c.u64()?;
    let config_len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(config_len)?)
        .map_err(|e| Error::corrupt(path, format!("config block: {e}")))?;
    let count = c.u32()?;
    let mut params = BTreeMap::new();
    let mut opt = AdamWState { step, ..Default::default() };
    let mut has_opt = false;
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::corrupt(path, "tensor name is not UTF-8"))?
            .to_string();
        let dtype = c.take(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::corrupt(path, format!("`{name}`: unsupported dtype tag {dtype}")));
        }
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::corrupt(path, format!("`{name}`: shape overflows")))?;
        let payload = c.take(n.checked_mul(8).ok_or_else(|| Error::corrupt(path, "payload overflows"))?)?;
        let data: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let dup = if let Some(p) = name.strip_prefix(MOMENT1) {
            has_opt = true;
            opt.m.insert(p.to_string(), data).is_some()
        } else if let Some(p) = name.strip_prefix(MOMENT2) {
            has_opt = true;
            opt.v.insert(p.to_string(), data).is_some()
        } else {
            let t = Tensor::new(shape, data).map_err(|e| Error::corrupt(path, e.to_string()))?;
            params.insert(name.clone(), t).is_some()
        };
        if dup {
            return Err(Error::corrupt(path, format!("duplicate tensor `{name}`")));
        }
    }
    if c.pos != body.len() {
        return Err(Error::corrupt(path, "trailing bytes after the last record"));
    }
    Ok(Checkpoint { config, step, params, optimizer: has_opt.then_some(opt) })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

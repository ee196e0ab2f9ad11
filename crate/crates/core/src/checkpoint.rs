//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "PMCLCKPT"
//! version  u32
//! seed     u64
//! meta     u32 length, then JSON {"model": ModelConfig, "config_hash": str}
//! count    u32
//! tensor   u16 name length, name, u8 group, u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! Tensors must appear in layout order and match the shapes implied by the
//! model config. A checkpoint may omit whole groups (the mixture head is
//! dropped after the contrastive stage).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Group, ModelConfig, ModelParams, TensorSpec};

pub const MAGIC: &[u8; 8] = b"PMCLCKPT";
pub const VERSION: u32 = 1;
const MAX_META_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Hash of the experiment config that produced these weights.
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    config_hash: String,
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { kind: "checkpoint", msg: msg.into() })
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let meta = serde_json::to_vec(&Meta { model: p.config.clone(), config_hash: self.config_hash.clone() })
            .map_err(|e| Error::Format { kind: "checkpoint", msg: e.to_string() })?;
        let mut out = Vec::with_capacity(64 + meta.len() + 8 * p.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(p.tensors.len() as u32).to_le_bytes());
        for t in &p.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.group.code());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for x in &p.data[t.range()] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return malformed("bad magic");
        }
        let version = r.u32()?;
        if version != VERSION {
            return malformed(format!("unsupported version {version}"));
        }
        let seed = r.u64()?;
        let meta_len = r.u32()? as usize;
        if meta_len > MAX_META_LEN {
            return malformed(format!("metadata length {meta_len} too large"));
        }
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format { kind: "checkpoint", msg: format!("metadata: {e}") })?;
        meta.model.validate().map_err(|e| Error::Format { kind: "checkpoint", msg: e.to_string() })?;
        let layout = meta.model.tensor_layout();

        let count = r.u32()? as usize;
        if count > layout.len() {
            return malformed(format!("{count} tensors but the model has {}", layout.len()));
        }
        let mut tensors = Vec::with_capacity(count);
        let mut data = Vec::new();
        let mut next = 0;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format { kind: "checkpoint", msg: "tensor name is not UTF-8".into() })?
                .to_string();
            let group = Group::from_code(r.u8()?);
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let Some(pos) = layout[next..].iter().position(|l| l.0 == name) else {
                return malformed(format!("unexpected or out-of-order tensor {name:?}"));
            };
            let (_, want_group, want_rows, want_cols) = &layout[next + pos];
            next += pos + 1;
            if group != Some(*want_group) || rows != *want_rows || cols != *want_cols {
                return malformed(format!("tensor {name} has shape {rows}x{cols}, expected {want_rows}x{want_cols}"));
            }
            let len = rows * cols;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format {
                kind: "checkpoint",
                msg: "tensor size overflows".into(),
            })?)?;
            let offset = data.len();
            data.reserve(len);
            for chunk in raw.chunks_exact(8) {
                let x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
                if !x.is_finite() {
                    return malformed(format!("non-finite value in tensor {name}"));
                }
                data.push(x);
            }
            tensors.push(TensorSpec { name, group: *want_group, rows, cols, offset });
        }
        if r.pos != bytes.len() {
            return malformed(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let params = ModelParams { config: meta.model, seed, tensors, data };
        Ok(Self { params, config_hash: meta.config_hash })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Hex SHA-256 of every value in `group`, for freeze checks.
pub fn group_digest(params: &ModelParams, group: Group) -> String {
    crate::digest::sha256_hex(&params.group_bytes(group))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return malformed(format!("truncated at byte {}: need {n}, have {remaining}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

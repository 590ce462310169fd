//! Weight checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "TACW"
//! version    u32      = 1
//! meta_len   u32      length of the JSON metadata document
//! meta       bytes    UTF-8 JSON (encoder config, producer info)
//! count      u32      number of tensors
//! directory  count × { name_len u32, name bytes, rank u32, dims u64 × rank }
//! data       f32 values of every tensor, in directory order, row-major
//! ```
//!
//! Tensor names carry a section prefix (`encoder/`, `disc/`, `head/`, ...).

use std::path::Path;

use serde_json::Value;

use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::params::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TACW";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const ENCODER_SECTION: &str = "encoder/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: ParamStore::new(),
        }
    }

    pub fn with_encoder(weights: &EncoderWeights<f32>) -> Self {
        let mut ck = Self::new(serde_json::json!({ "encoder": weights.config() }));
        ck.add_section(ENCODER_SECTION, weights.store());
        ck
    }

    pub fn add_section(&mut self, prefix: &str, store: &ParamStore<f32>) {
        self.tensors.extend_prefixed(prefix, store);
    }

    pub fn section(&self, prefix: &str) -> ParamStore<f32> {
        self.tensors.extract_prefixed(prefix)
    }

    pub fn encoder(&self) -> Result<EncoderWeights<f32>> {
        let cfg: EncoderConfig = serde_json::from_value(
            self.meta
                .get("encoder")
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint has no encoder config".into()))?,
        )?;
        let store = self.section(ENCODER_SECTION);
        if store.is_empty() {
            return Err(Error::Config("checkpoint has no encoder section".into()));
        }
        EncoderWeights::from_store(cfg, store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        let mut out = Vec::with_capacity(64 + meta.len() + self.tensors.len() * 4);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.views().len() as u32).to_le_bytes());
        for v in self.tensors.views() {
            out.extend_from_slice(&(v.name.len() as u32).to_le_bytes());
            out.extend_from_slice(v.name.as_bytes());
            out.extend_from_slice(&(v.shape.len() as u32).to_le_bytes());
            for &d in &v.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for x in self.tensors.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"TACW\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32("meta length")? as usize;
        let meta_at = r.offset();
        let meta: Value = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| r.error_at(meta_at, format!("metadata: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut dir = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name_at = r.offset();
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| r.error_at(name_at, "tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            dir.push((name, shape));
        }
        let mut tensors = ParamStore::new();
        for (name, shape) in dir {
            let len: usize = shape.iter().product();
            let at = r.offset();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| r.error_at(at, "tensor too large".into()))?, "tensor data")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if tensors.id(&name).is_ok() {
                return Err(r.error_at(at, format!("duplicate tensor {name}")));
            }
            tensors.push(name, &shape, values);
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.offset(), format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Cursor over a byte buffer that reports failures with their byte offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Parse {
            offset: offset as u64,
            msg,
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

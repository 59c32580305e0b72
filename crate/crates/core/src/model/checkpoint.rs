//! Checkpoint files.
//!
//! Container header as in `codec` with magic `PRCK`, version 1, flags 0.
//!
//! ```text
//! body offset  size          field
//! 0            4             class_count K (u32)
//! 4            4             feature_dim D (u32)
//! 8            8             temperature (f64)
//! 16           32            SHA-256 of the producing config's JSON
//! 48           8 * K * D     weights, row-major (row k = class k)
//! 48 + 8KD     8 * K         bias
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::LinearModel;
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PRCK";
pub const VERSION: u16 = 1;

pub type ConfigHash = [u8; 32];

/// SHA-256 of a config's JSON serialization.
pub fn config_hash<T: serde::Serialize>(config: &T) -> Result<ConfigHash> {
    let json = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&json).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LinearModel,
    pub config_hash: ConfigHash,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = Writer::default();
        w.u32(m.class_count() as u32);
        w.u32(m.feature_dim() as u32);
        w.f64(m.temperature());
        w.bytes(&self.config_hash);
        for &p in m.params() {
            w.f64(p);
        }
        codec::seal(MAGIC, VERSION, 0, &w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let opened = codec::open(bytes, MAGIC, VERSION)?;
        let mut r = Reader::new(opened.body);
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let temperature = r.f64()?;
        let config_hash = r.array::<32>()?;
        let weights = r.f64s(k * d)?;
        let bias = r.f64s(k)?;
        r.finish()?;
        let model = LinearModel::new(weights, bias, temperature)
            .map_err(|e| Error::Format(format!("bad checkpoint contents: {e}")))?;
        Ok(Self { model, config_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

//! Model file layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"TJMODEL\0"` |
//! | version | `u32` |
//! | config length | `u32` |
//! | config | JSON bytes |
//! | tensor count | `u32` |
//! | per tensor | `u32` rows, `u32` cols, `rows·cols` `f64` in row-major order |
//!
//! Tensors follow [`ModelParams::tensors`] order. The positional table is not
//! stored; it is rebuilt from the configuration.

use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TJMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(params: &ModelParams) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&params.config)?;
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(64 + config.len() + 8 * params.num_parameters() + 8 * tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for row in t.row_iter() {
            for v in row.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.at..end];
                self.at = end;
                Ok(out)
            }
            None => Err(Error::Corrupt(format!("truncated while reading {what} at byte {}", self.at))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let len = r.u32("config length")? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| Error::Corrupt(format!("config: {e}")))?;
    config.validate()?;
    let mut params = ModelParams::init(&config, 0)?;
    let count = r.u32("tensor count")? as usize;
    let names = params.tensor_names();
    if count != names.len() {
        return Err(Error::Corrupt(format!("{count} tensors stored, configuration needs {}", names.len())));
    }
    for (t, name) in params.tensors_mut().into_iter().zip(&names) {
        let rows = r.u32(name)? as usize;
        let cols = r.u32(name)? as usize;
        if (rows, cols) != t.shape() {
            return Err(Error::Corrupt(format!("{name} is {rows}×{cols}, expected {:?}", t.shape())));
        }
        for i in 0..rows {
            for j in 0..cols {
                t[(i, j)] = r.f64(name)?;
            }
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    if !params.is_finite() {
        return Err(Error::Corrupt("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(params)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&std::fs::read(path)?)
}

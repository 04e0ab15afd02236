//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DEALCKPT"
//! version  u32
//! count    u32
//! entry*   name_len u32, name (utf-8), ndim u32, dims u64 x ndim, payload f64 x numel
//! ```
//!
//! Entries are written in name order so identical weights give identical bytes.

use std::path::Path;

use crate::error::{Result, TensorError};
use crate::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"DEALCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint<S: Scalar>(params: &ParamStore<S>) -> Vec<u8> {
    let mut entries: Vec<(&str, &Tensor<S>)> = params.iter().map(|(_, n, t)| (n, t)).collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<S>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(TensorError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 8, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| TensorError::Checkpoint(format!("entry `{name}`: {e}")))?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(TensorError::Checkpoint(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Overwrites every parameter in `params` from a decoded checkpoint. Names
/// and shapes must match exactly.
pub fn restore<S: Scalar>(params: &mut ParamStore<S>, entries: Vec<(String, Tensor<S>)>) -> Result<()> {
    if entries.len() != params.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            entries.len(),
            params.len()
        )));
    }
    for (name, tensor) in entries {
        let id = params
            .id(&name)
            .ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter `{name}`")))?;
        let slot = params.get_mut(id);
        if slot.shape() != tensor.shape() {
            return Err(TensorError::Checkpoint(format!(
                "parameter `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                tensor.shape(),
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(tensor.data());
    }
    Ok(())
}

pub fn save_checkpoint<S: Scalar>(path: &Path, params: &ParamStore<S>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path, params: &mut ParamStore<S>) -> Result<()> {
    let bytes = std::fs::read(path)?;
    restore(params, decode_checkpoint(&bytes)?)
}

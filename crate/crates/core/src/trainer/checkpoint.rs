//! Binary checkpoint, little-endian:
//!
//! ```text
//! b"NPCK" | version u32 | config hash u64 | config JSON length u32 | config JSON
//! | tensor count u32 | per tensor: name length u32, name, rank u32, dims u32 x rank, f64 data
//! ```

use std::fs;
use std::path::Path;

use super::TrainError;
use crate::autodiff::Tensor;
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let json = serde_json::to_vec(model.config()).expect("config serialises");
    let mut out = Vec::with_capacity(64 + json.len() + model.parameter_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.config().config_hash().to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.parameters().len() as u32).to_le_bytes());
    for (name, t) in model.named_parameters() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> TrainError {
        TrainError::Format {
            file: self.file.to_string(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint. When `expected` is given, its hash must match the
/// stored one.
pub fn decode_checkpoint(bytes: &[u8], file: &str, expected: Option<&ModelConfig>) -> Result<Model, TrainError> {
    let mut r = Reader { bytes, pos: 0, file };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            file: file.to_string(),
            reason: format!("format version {version}, expected {CHECKPOINT_VERSION}"),
        });
    }
    let stored_hash = r.u64("config hash")?;
    let json_len = r.u32("config length")? as usize;
    let json = r.take(json_len, "config")?;
    let config: ModelConfig =
        serde_json::from_slice(json).map_err(|e| r.err(format!("config JSON: {e}")))?;
    if config.config_hash() != stored_hash {
        return Err(TrainError::Version {
            file: file.to_string(),
            reason: format!(
                "stored config hash {stored_hash:016x} does not match its config ({:016x})",
                config.config_hash()
            ),
        });
    }
    if let Some(exp) = expected {
        if exp.config_hash() != stored_hash {
            return Err(TrainError::Version {
                file: file.to_string(),
                reason: format!(
                    "checkpoint config hash {stored_hash:016x}, expected {:016x}",
                    exp.config_hash()
                ),
            });
        }
    }
    let mut model = Model::new(config)?;
    let count = r.u32("tensor count")? as usize;
    if count != model.parameters().len() {
        return Err(r.err(format!("{count} tensors, model has {}", model.parameters().len())));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let len = r.u32("name length")? as usize;
        let name = r.take(len, "name")?;
        if name != model.names()[k].as_bytes() {
            return Err(r.err(format!("tensor {k} is {:?}, expected {}", String::from_utf8_lossy(name), model.names()[k])));
        }
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        values.push(Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    model.set_parameters(values)?;
    Ok(model)
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(model)).map_err(|e| TrainError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string(), None)
}

/// Loads a checkpoint that must have been trained with `config`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string(), Some(config))
}

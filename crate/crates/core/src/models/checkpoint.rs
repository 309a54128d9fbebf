//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `"MRRCCKPT"`, `u32` version, `u64` config length, the model config as
//! TOML text, `u64` tensor count, then per tensor: `u32` name length, name
//! bytes, `u32` rank, `u64` extents, and the values as `f64`.

use std::fs;
use std::path::Path;

use mrrc_tensor::Tensor;

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MRRCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let config = toml::to_string(model.config()).map_err(|e| Error::Config(e.to_string()))?;
    let store = model.params();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format!("length {v} too large"))
    }
}

/// Loads a checkpoint, rebuilding the model from the stored config and
/// requiring the stored tensors to match its census exactly.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8).map_err(bad)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = r.u32().map_err(bad)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u64().map_err(bad)?;
    let text = std::str::from_utf8(r.take(len).map_err(bad)?).map_err(|e| bad(e.to_string()))?;
    let config: ModelConfig = toml::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
    let mut model = build_model(&config)?;

    let count = r.u64().map_err(bad)?;
    if count != model.params().len() {
        return Err(bad(format!("{count} tensors stored, model has {}", model.params().len())));
    }
    for _ in 0..count {
        let n = r.u32().map_err(bad)? as usize;
        let name = std::str::from_utf8(r.take(n).map_err(bad)?).map_err(|e| bad(e.to_string()))?.to_string();
        let rank = r.u32().map_err(bad)? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<std::result::Result<Vec<_>, _>>().map_err(bad)?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow".into()))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| bad("shape overflow".into()))?).map_err(bad)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        let tensor = Tensor::new(shape, data)?;
        if !tensor.is_finite() {
            return Err(bad(format!("tensor {name} holds non-finite values")));
        }
        model
            .params_mut()
            .set(id, tensor)
            .map_err(|e| bad(format!("tensor {name}: {e}")))?;
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

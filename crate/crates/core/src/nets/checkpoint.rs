//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "CVRS" | version u32 | config hash u64 | header length u32 |
//!   header JSON (the ArchConfig) | parameter count u32 | per parameter:
//!   name length u32, name bytes, rank u32, extents u32 each, f32 data.
//!
//! Parameters are written in declaration order; save -> load -> save is
//! byte-identical (values are stored as f32 regardless of the in-memory
//! precision, and f32 -> f64 -> f32 is exact).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{config_hash, ArchConfig, ModelGraph};

const MAGIC: &[u8; 4] = b"CVRS";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&model.meta.arch)
        .map_err(|e| Error::Data(format!("config serialization: {e}")))?;
    w.write_all(&model.meta.config_hash.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for e in &model.params.entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.tensor.rank() as u32).to_le_bytes())?;
        for &d in e.tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in e.tensor.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(CheckpointError::Truncated))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

/// Load a self-describing checkpoint: the header rebuilds the architecture,
/// then stored tensors replace the freshly initialized parameters.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelGraph<T>> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: std::io::BufReader::new(file),
    };
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(CheckpointError::BadMagic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(CheckpointError::UnsupportedVersion(version)));
    }
    let stored_hash = r.u64()?;
    let header_len = r.u32()? as usize;
    let header = r.bytes(header_len)?;
    let arch: ArchConfig = serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(CheckpointError::MalformedHeader(e.to_string())))?;
    let expected_hash = config_hash(&arch);
    if stored_hash != expected_hash {
        return Err(Error::Checkpoint(CheckpointError::ConfigHashMismatch {
            found: stored_hash,
            expected: expected_hash,
        }));
    }

    let mut model: ModelGraph<T> = arch.build(0)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(CheckpointError::MalformedHeader(format!(
            "{count} stored parameters, architecture declares {}",
            model.params.len()
        ))));
    }
    for e in &mut model.params.entries {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|e| Error::Checkpoint(CheckpointError::MalformedHeader(e.to_string())))?;
        if name != e.name {
            return Err(Error::Checkpoint(CheckpointError::MalformedHeader(format!(
                "parameter `{name}` where `{}` was declared",
                e.name
            ))));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != e.tensor.shape() {
            return Err(Error::Checkpoint(CheckpointError::MalformedHeader(format!(
                "parameter `{name}` stored as {shape:?}, declared {:?}",
                e.tensor.shape()
            ))));
        }
        let numel: usize = shape.iter().product();
        let raw = r.bytes(numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        e.tensor = Tensor::new(shape, data)?;
    }
    Ok(model)
}

/// Load and insist the stored architecture matches `expected`.
pub fn load_checkpoint_expecting<T: Scalar>(
    path: &Path,
    expected: &ArchConfig,
) -> Result<ModelGraph<T>> {
    let model = load_checkpoint::<T>(path)?;
    let expected_hash = config_hash(expected);
    if model.meta.config_hash != expected_hash {
        return Err(Error::Checkpoint(CheckpointError::ConfigHashMismatch {
            found: model.meta.config_hash,
            expected: expected_hash,
        }));
    }
    Ok(model)
}

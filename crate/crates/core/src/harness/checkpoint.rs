//! Versioned binary checkpoints of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "ALTUPCKP"
//! version     u32
//! config_len  u64, then config_len bytes of UTF-8 JSON
//! count       u32
//! count × { name_len u32, name bytes, rank u32, rank × u64 dims }
//! payload     Σ numel × f64, row-major, in header order
//! ```

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ALTUPCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// JSON of the run configuration that produced the tensors.
    pub config: String,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

pub fn encode<S: Scalar>(store: &ParamStore<S>, config: &str) -> Vec<u8> {
    let payload: usize = store.iter().map(|(_, t)| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(64 + config.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
    }
    for (_, t) in store.iter() {
        for &v in t.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Malformed("length overflow".into()))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Malformed(format!("{what} does not fit in memory")))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String, CheckpointError> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let config_len = r.len("config length")?;
    let config = r.string(config_len, "config")?;
    let count = r.u32()? as usize;
    let mut header = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len, "tensor name")?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>, _>>()?;
        if shape.contains(&0) {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` has a zero dimension")));
        }
        header.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(header.len());
    for (name, shape) in header {
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` is too large")))?;
        let raw = r.take(numel)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(Checkpoint { config, tensors })
}

impl Checkpoint {
    /// Copy every tensor into `store`, which must hold the same names and
    /// shapes in the same order. The first differing entry is reported before
    /// a difference in count.
    pub fn restore_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<(), CheckpointError> {
        for ((name, t), (expected, slot)) in self.tensors.iter().zip(store.tensors_mut()) {
            if name != expected {
                return Err(CheckpointError::NameMismatch {
                    expected: expected.to_string(),
                    found: name.clone(),
                });
            }
            if t.shape() != slot.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: slot.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if self.tensors.len() != store.len() {
            return Err(CheckpointError::TensorCount {
                expected: store.len(),
                found: self.tensors.len(),
            });
        }
        for ((_, t), (_, slot)) in self.tensors.iter().zip(store.tensors_mut()) {
            *slot = t.cast();
        }
        Ok(())
    }
}

pub fn save<S: Scalar>(path: &Path, store: &ParamStore<S>, config: &str) -> Result<()> {
    std::fs::write(path, encode(store, config)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

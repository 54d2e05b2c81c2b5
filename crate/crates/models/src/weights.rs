//! Binary weight files.
//!
//! Layout (little-endian): magic `SDGW`, u32 version, u32 tensor count, then
//! per tensor a u16 name length, the UTF-8 name, a u8 rank, u32 extents and an
//! f32 payload; a CRC32 of every preceding byte closes the file.

use std::collections::HashSet;
use std::path::Path;

use ribforge_core::nn::ParamStore;
use ribforge_core::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SDGW";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight format version {0} (expected {VERSION})")]
    Version(u32),
    #[error("weight file truncated or malformed: {0}")]
    Truncated(String),
    #[error("weight file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("architecture mismatch at {name:?}: {detail}")]
    Mismatch { name: String, detail: String },
}

pub type Result<T> = std::result::Result<T, WeightsError>;

/// Ordered named tensors as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl ModelWeights {
    /// Snapshot of every parameter and buffer in store order.
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        ModelWeights {
            tensors: store.iter().map(|p| (p.name.clone(), p.value().cast::<f32>())).collect(),
        }
    }

    /// Copies values into `store`, which must hold exactly the same names and
    /// shapes in the same order. Nothing is written if any entry differs.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let params: Vec<_> = store.iter().map(|p| (p.name.clone(), p.value().shape().to_vec())).collect();
        for (i, (name, shape)) in params.iter().enumerate() {
            let Some((fname, t)) = self.tensors.get(i) else {
                return Err(WeightsError::Mismatch { name: name.clone(), detail: "missing from weight file".into() });
            };
            if fname != name {
                return Err(WeightsError::Mismatch {
                    name: name.clone(),
                    detail: format!("weight file has {fname:?} at position {i}"),
                });
            }
            if t.shape() != &shape[..] {
                return Err(WeightsError::Mismatch {
                    name: name.clone(),
                    detail: format!("shape {:?} in file, {:?} in model", t.shape(), shape),
                });
            }
        }
        if let Some((extra, _)) = self.tensors.get(params.len()) {
            return Err(WeightsError::Mismatch { name: extra.clone(), detail: "not present in model".into() });
        }
        for (i, (_, t)) in self.tensors.iter().enumerate() {
            store.set(ribforge_core::nn::ParamId(i), t.cast());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(WeightsError::DuplicateName(name.clone()));
            }
            let len = u16::try_from(name.len()).map_err(|_| WeightsError::Truncated(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(WeightsError::BadMagic);
            }
            return Err(WeightsError::Truncated(format!("{} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(WeightsError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(WeightsError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| WeightsError::Truncated("name is not UTF-8".into()))?;
            if !seen.insert(name.clone()) {
                return Err(WeightsError::DuplicateName(name));
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let numel = numel.filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()));
            let numel = numel.ok_or_else(|| WeightsError::Truncated(format!("payload of {name}")))?;
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| WeightsError::Truncated(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(WeightsError::Truncated(format!("{} trailing bytes", r.remaining())));
        }
        Ok(ModelWeights { tensors })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(WeightsError::Truncated(format!("wanted {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = weights.to_bytes()?;
    std::fs::write(path, bytes).map_err(|source| WeightsError::Io { path: path.display().to_string(), source })
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|source| WeightsError::Io { path: path.display().to_string(), source })?;
    ModelWeights::from_bytes(&bytes)
}

/// Saves a store directly.
pub fn save_store<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    save_weights(&ModelWeights::from_store(store), path)
}

/// Loads a weight file into a store of matching architecture.
pub fn load_store<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    load_weights(path)?.load_into(store)
}

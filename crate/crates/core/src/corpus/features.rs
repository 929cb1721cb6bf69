//! Precomputed image descriptors.
//!
//! File layout (little-endian): magic `CSMNFEAT`, u32 version = 1,
//! u32 mode (0 = pool5, 1 = res5c), u32 dim, u32 count, then per record
//! u16 key length, key bytes and `dim` (pool5) or `49·dim` (res5c) f32s.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::ImageMode;
use crate::numcore::Tensor;
use crate::{CsmnError, Result};

const MAGIC: &[u8; 8] = b"CSMNFEAT";
const VERSION: u32 = 1;
pub const GRID_CELLS: usize = 49;

/// Read-only map from image key to descriptor (`[dim]` or `[49×dim]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    mode: ImageMode,
    dim: usize,
    keys: Vec<String>,
    features: HashMap<String, Tensor<f32>>,
}

fn ferr(msg: impl Into<String>) -> CsmnError {
    CsmnError::FeatureFormat(msg.into())
}

impl FeatureStore {
    pub fn new(mode: ImageMode, dim: usize) -> Self {
        FeatureStore { mode, dim, keys: Vec::new(), features: HashMap::new() }
    }

    pub fn mode(&self) -> ImageMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    fn expected_shape(&self) -> Vec<usize> {
        match self.mode {
            ImageMode::Pool5 => vec![self.dim],
            ImageMode::Res5c => vec![GRID_CELLS, self.dim],
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, feature: Tensor<f32>) -> Result<()> {
        let key = key.into();
        if feature.shape() != self.expected_shape() {
            return Err(ferr(format!("feature {key:?} has shape {:?}, expected {:?}", feature.shape(), self.expected_shape())));
        }
        if key.len() > u16::MAX as usize {
            return Err(ferr("key longer than 65535 bytes"));
        }
        if self.features.insert(key.clone(), feature).is_some() {
            return Err(ferr(format!("duplicate key {key:?}")));
        }
        self.keys.push(key);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<f32>> {
        self.features.get(key).ok_or_else(|| CsmnError::MissingFeature(key.to_string()))
    }

    /// Global descriptor: the vector itself for pool5, the grid mean for res5c.
    pub fn pooled(&self, key: &str) -> Result<Vec<f32>> {
        let f = self.get(key)?;
        Ok(match self.mode {
            ImageMode::Pool5 => f.data().to_vec(),
            ImageMode::Res5c => {
                let mut out = vec![0.0f32; self.dim];
                for r in 0..GRID_CELLS {
                    for (o, &v) in out.iter_mut().zip(f.row(r)) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|v| *v /= GRID_CELLS as f32);
                out
            }
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mode: u32 = match self.mode {
            ImageMode::Pool5 => 0,
            ImageMode::Res5c => 1,
        };
        out.extend_from_slice(&mode.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u32).to_le_bytes());
        for key in &self.keys {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in self.features[key].data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a feature file, checking it against the expected mode and, if given, dimension.
    pub fn from_bytes(bytes: &[u8], mode: ImageMode, expected_dim: Option<usize>) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| ferr("truncated header"))?;
        if &magic != MAGIC {
            return Err(ferr("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ferr(format!("unsupported version {version}")));
        }
        let file_mode = match read_u32(&mut r)? {
            0 => ImageMode::Pool5,
            1 => ImageMode::Res5c,
            m => return Err(ferr(format!("unknown mode {m}"))),
        };
        if file_mode != mode {
            return Err(ferr(format!("file holds {file_mode:?} features, expected {mode:?}")));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(ferr("zero feature dimension"));
        }
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(ferr(format!("dimension mismatch: file {dim}, expected {want}")));
            }
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = FeatureStore::new(mode, dim);
        let per_record = dim * if mode == ImageMode::Res5c { GRID_CELLS } else { 1 };
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(|_| ferr("truncated record"))?;
            let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut key).map_err(|_| ferr("truncated key"))?;
            let key = String::from_utf8(key).map_err(|_| ferr("key is not UTF-8"))?;
            let mut data = Vec::with_capacity(per_record);
            for _ in 0..per_record {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| ferr(format!("truncated data for {key:?}")))?;
                data.push(f32::from_le_bytes(b));
            }
            let shape = store.expected_shape();
            store.insert(key, Tensor::new(shape, data)?)?;
        }
        if !r.is_empty() {
            return Err(ferr("trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CsmnError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| CsmnError::io(path, e))
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ferr("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_features(path: &Path, mode: ImageMode, expected_dim: Option<usize>) -> Result<FeatureStore> {
    let bytes = std::fs::read(path).map_err(|e| CsmnError::io(path, e))?;
    FeatureStore::from_bytes(&bytes, mode, expected_dim)
}

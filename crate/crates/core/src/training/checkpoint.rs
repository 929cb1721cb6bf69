//! Binary checkpoints.
//!
//! Layout (little-endian): magic `CSMNCKPT`, u32 version, u64 config hash,
//! u64 vocab hash, u32 epoch, u64 Adam step, u32 tensor count `n`, then `n`
//! parameter records followed by `n` first-moment and `n` second-moment
//! records. A record is u16 name length, name bytes, u32 rank, u32 dims,
//! then f32 values.

use std::io::Read;
use std::path::Path;

use crate::numcore::{ParamSet, Scalar, Tensor};
use crate::{CsmnError, Result};

const MAGIC: &[u8; 8] = b"CSMNCKPT";
const VERSION: u32 = 1;

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub vocab_hash: u64,
    /// Completed epochs.
    pub epoch: u32,
    pub params: ParamSet<f32>,
    pub adam: AdamState,
}

fn cerr(msg: impl Into<String>) -> CsmnError {
    CsmnError::CheckpointFormat(msg.into())
}

fn write_set(out: &mut Vec<u8>, set: &ParamSet<f32>) {
    for (name, t) in set.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn take<const N: usize>(r: &mut &[u8], what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| cerr(format!("truncated {what}")))?;
    Ok(b)
}

fn read_set(r: &mut &[u8], n: usize) -> Result<ParamSet<f32>> {
    let mut set = ParamSet::new();
    for _ in 0..n {
        let len = u16::from_le_bytes(take(r, "name length")?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| cerr("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| cerr("name is not UTF-8"))?;
        let rank = u32::from_le_bytes(take(r, "rank")?) as usize;
        if rank == 0 || rank > 8 {
            return Err(cerr(format!("{name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(r, "dims")?) as usize);
        }
        let count: usize = shape.iter().product();
        if count * 4 > r.len() {
            return Err(cerr(format!("{name}: truncated data")));
        }
        let data = (0..count).map(|_| take(r, "data").map(f32::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| cerr(format!("{name}: {e}")))?;
        set.insert(name, tensor).map_err(|e| cerr(e.to_string()))?;
    }
    Ok(set)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        write_set(&mut out, &self.params);
        write_set(&mut out, &self.adam.m);
        write_set(&mut out, &self.adam.v);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        if &take::<8>(&mut r, "magic")? != MAGIC {
            return Err(cerr("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut r, "version")?);
        if version != VERSION {
            return Err(cerr(format!("unsupported version {version}")));
        }
        let config_hash = u64::from_le_bytes(take(&mut r, "config hash")?);
        let vocab_hash = u64::from_le_bytes(take(&mut r, "vocab hash")?);
        let epoch = u32::from_le_bytes(take(&mut r, "epoch")?);
        let step = u64::from_le_bytes(take(&mut r, "step")?);
        let n = u32::from_le_bytes(take(&mut r, "tensor count")?) as usize;
        let params = read_set(&mut r, n)?;
        let m = read_set(&mut r, n)?;
        let v = read_set(&mut r, n)?;
        for set in [&m, &v] {
            let same = params.iter().zip(set.iter()).all(|((a, x), (b, y))| a == b && x.shape() == y.shape());
            if !same {
                return Err(cerr("moment tensors do not match parameters"));
            }
        }
        if !r.is_empty() {
            return Err(cerr("trailing bytes"));
        }
        Ok(Checkpoint { config_hash, vocab_hash, epoch, params, adam: AdamState { m, v, step } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CsmnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CsmnError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn check_vocab(&self, vocab_hash: u64) -> Result<()> {
        if self.vocab_hash == vocab_hash {
            Ok(())
        } else {
            Err(CsmnError::VocabMismatch { expected: self.vocab_hash, found: vocab_hash })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AblationFlags, RunConfig, Task};
    use crate::model::init_params;
    use crate::numcore::RngState;

    fn checkpoint() -> Checkpoint {
        let cfg = RunConfig::desk(Task::Caption).model;
        let params: ParamSet<f32> = init_params(&cfg, &AblationFlags::default(), &mut RngState::new(3)).unwrap();
        let mut adam = AdamState::new(&params);
        adam.step = 17;
        adam.m.tensors_mut().next().unwrap().data_mut()[0] = -1.5e-7;
        adam.v.tensors_mut().next().unwrap().data_mut()[3] = f32::MIN_POSITIVE;
        Checkpoint { config_hash: 0xdead_beef, vocab_hash: 42, epoch: 3, params, adam }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn vocab_hash_is_checked() {
        let ck = checkpoint();
        assert!(ck.check_vocab(42).is_ok());
        assert!(matches!(ck.check_vocab(43), Err(CsmnError::VocabMismatch { expected: 42, found: 43 })));
    }
}

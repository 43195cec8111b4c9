//! `SIMC` checkpoints: named tensors with shapes, element width and CRC32.
//!
//! Layout: magic, version `u32`, config hash (32 bytes), step `u64`, tensor
//! count `u32`, then per tensor: name length `u32`, UTF-8 name, rank `u32`,
//! dims `u64 × rank`, width `u8` (4 or 8), payload, CRC32 of the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::bytes::*;
use crate::nn::Params;
use crate::real::Real;
use crate::{Result, SimError};

const MAGIC: &[u8; 4] = b"SIMC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn width(&self) -> u8 {
        match self {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => f32_bytes(v.iter().copied()),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            TensorData::F32(v) => v[i] as f64,
            TensorData::F64(v) => v[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32], step: u64) -> Self {
        Self {
            config_hash,
            step,
            tensors: Vec::new(),
        }
    }

    /// Appends every parameter of `module`, named `prefix.<param>`.
    pub fn add_module<S: Real, P: Params<S> + ?Sized>(&mut self, prefix: &str, module: &P) {
        module.visit(prefix, &mut |name, t| {
            let data = if S::WIDTH == 4 {
                TensorData::F32(t.iter().map(|v| v.f64() as f32).collect())
            } else {
                TensorData::F64(t.iter().map(|v| v.f64()).collect())
            };
            self.tensors.push(NamedTensor {
                name,
                shape: vec![t.nrows(), t.ncols()],
                data,
            });
        });
    }

    pub fn add_matrix(&mut self, name: &str, m: &Array2<f64>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: vec![m.nrows(), m.ncols()],
            data: TensorData::F64(m.iter().copied().collect()),
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.tensors.iter().any(|t| t.name.starts_with(&dotted))
    }

    /// Overwrites every parameter of `module` from the tensor of the same
    /// name; missing tensors and shape mismatches are format errors.
    pub fn restore_module<S: Real, P: Params<S> + ?Sized>(&self, prefix: &str, module: &mut P) -> Result<()> {
        let mut err = None;
        module.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.get(&name) {
                None => err = Some(SimError::Format(format!("checkpoint lacks tensor {name:?}"))),
                Some(nt) if nt.shape != [t.nrows(), t.ncols()] => {
                    err = Some(SimError::Format(format!(
                        "tensor {name:?} has shape {:?}, model expects {:?}",
                        nt.shape,
                        t.shape()
                    )))
                }
                Some(nt) => {
                    for (i, v) in t.iter_mut().enumerate() {
                        *v = S::c(nt.data.get(i));
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self
            .get(name)
            .ok_or_else(|| SimError::Format(format!("checkpoint lacks tensor {name:?}")))?;
        if t.shape.len() != 2 {
            return Err(SimError::Format(format!("tensor {name:?} is not a matrix")));
        }
        Ok(Array2::from_shape_fn((t.shape[0], t.shape[1]), |(i, j)| {
            t.data.get(i * t.shape[1] + j)
        }))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        w.write_all(&self.config_hash)?;
        put_u64(&mut w, self.step)?;
        put_u32(&mut w, self.tensors.len() as u32)?;
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(SimError::Format(format!(
                    "tensor {:?}: shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            put_u32(&mut w, t.name.len() as u32)?;
            w.write_all(t.name.as_bytes())?;
            put_u32(&mut w, t.shape.len() as u32)?;
            for &d in &t.shape {
                put_u64(&mut w, d as u64)?;
            }
            w.write_all(&[t.data.width()])?;
            let payload = t.data.to_bytes();
            w.write_all(&payload)?;
            put_u32(&mut w, crc32fast::hash(&payload))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, MAGIC)?;
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(SimError::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash: [u8; 32] = get(&mut r)?;
        let step = get_u64(&mut r)?;
        let count = get_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = get_u32(&mut r)? as usize;
            let name = String::from_utf8(get_vec(&mut r, name_len)?)
                .map_err(|_| SimError::Format("tensor name is not UTF-8".into()))?;
            let rank = get_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(SimError::Format(format!("tensor {name:?} has rank {rank}")));
            }
            let shape = (0..rank).map(|_| get_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let [width] = get::<_, 1>(&mut r)?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| SimError::Format(format!("tensor {name:?} is too large")))?;
            let payload = get_vec(&mut r, n * width as usize)?;
            check_crc(&payload, get_u32(&mut r)?, &name)?;
            let data = match width {
                4 => TensorData::F32(f32_from(&payload)),
                8 => TensorData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                w => return Err(SimError::Format(format!("tensor {name:?} has element width {w}"))),
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self {
            config_hash,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    /// Reads `path`; a config hash different from `expected` is an error
    /// unless `force` is set.
    pub fn load(path: &Path, expected: Option<&[u8; 32]>, force: bool) -> Result<Self> {
        let ck = Self::read_from(BufReader::new(File::open(path)?))?;
        if let Some(h) = expected {
            if &ck.config_hash != h && !force {
                return Err(SimError::State(format!(
                    "checkpoint {} was written for config {}, current config is {}; pass --force to load anyway",
                    path.display(),
                    super::hex(&ck.config_hash),
                    super::hex(h)
                )));
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sit::{SitConfig, SitEncoder};

    #[test]
    fn encoder_round_trip_is_bitwise() {
        let cfg = SitConfig::default();
        let enc = SitEncoder::<f32>::new(cfg.clone(), &mut stream(1, &[])).unwrap();
        let mut ck = Checkpoint::new([7; 32], 42);
        ck.add_module("encoder", &enc);
        ck.add_matrix("extra", &Array2::from_elem((2, 3), 0.1));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);

        let mut other = SitEncoder::<f32>::new(cfg.clone(), &mut stream(2, &[])).unwrap();
        back.restore_module("encoder", &mut other).unwrap();
        let mut ck2 = Checkpoint::new([7; 32], 42);
        ck2.add_module("encoder", &other);
        ck2.add_matrix("extra", &Array2::from_elem((2, 3), 0.1));
        assert_eq!(ck2, ck);
    }

    #[test]
    fn corruption_and_mismatch_are_detected() {
        let mut ck = Checkpoint::new([1; 32], 0);
        ck.add_matrix("w", &Array2::from_elem((4, 4), 2.0));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        let n = bad.len();
        bad[n - 10] ^= 0xff;
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(SimError::Format(_))));
        assert!(matches!(Checkpoint::read_from(&buf[..20]), Err(SimError::Format(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.simc");
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path, Some(&[2; 32]), false), Err(SimError::State(_))));
        assert!(Checkpoint::load(&path, Some(&[2; 32]), true).is_ok());
        assert!(Checkpoint::load(&path, Some(&[1; 32]), false).is_ok());
    }

    #[test]
    fn restore_rejects_shape_mismatch() {
        let enc = SitEncoder::<f64>::new(SitConfig::default(), &mut stream(1, &[])).unwrap();
        let mut ck = Checkpoint::new([0; 32], 0);
        ck.add_module("encoder", &enc);
        let mut bigger = SitEncoder::<f64>::new(
            SitConfig {
                hidden_dim: 32,
                ..SitConfig::default()
            },
            &mut stream(1, &[]),
        )
        .unwrap();
        assert!(matches!(ck.restore_module("encoder", &mut bigger), Err(SimError::Format(_))));
    }
}

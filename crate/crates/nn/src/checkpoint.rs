//! `SKNN` checkpoint files.
//!
//! Layout (little-endian): magic `SKNN`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` rank, `rank × u32`
//! dims, and the `f32` payload. Optimizer moments are stored as sibling
//! entries suffixed `@m` / `@v`, the optimizer step count as `<prefix>@step`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SKNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered map of named f32 tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(name.into(), Tensor { shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn set_scalar(&mut self, name: &str, v: f64) {
        self.insert(name, vec![1], vec![v as f32]);
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        t.data.first().map(|&v| v as f64).ok_or_else(|| Error::Corrupt(format!("empty scalar {name}")))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    /// Store every array of `store` under `prefix/`.
    pub fn put_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        let conv = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect::<Vec<f32>>();
        for e in store.entries() {
            let name = format!("{prefix}/{}", e.name);
            self.insert(name.clone(), e.shape.clone(), conv(&e.value));
            if e.trainable {
                self.insert(format!("{name}@m"), e.shape.clone(), conv(&e.first_moment));
                self.insert(format!("{name}@v"), e.shape.clone(), conv(&e.second_moment));
            }
        }
        self.set_scalar(&format!("{prefix}@step"), store.step as f64);
    }

    /// Fill a store (already laid out by the network constructor) from `prefix/`.
    pub fn load_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let conv = |v: &[f32]| v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect::<Vec<T>>();
        for e in store.entries_mut() {
            let name = format!("{prefix}/{}", e.name);
            let t = self.get(&name)?;
            if t.shape != e.shape {
                return Err(Error::Corrupt(format!("shape of {name}: {:?} vs {:?}", t.shape, e.shape)));
            }
            e.value = conv(&t.data);
            if e.trainable {
                e.first_moment = conv(&self.get(&format!("{name}@m"))?.data);
                e.second_moment = conv(&self.get(&format!("{name}@v"))?.data);
                e.grad.iter_mut().for_each(|g| *g = T::zero());
            }
        }
        store.step = self.scalar(&format!("{prefix}@step"))? as u64;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let n = read_u32(r)?;
        let mut ck = Checkpoint::new();
        for _ in 0..n {
            let len = read_u32(r)? as usize;
            if len > 1 << 16 {
                return Err(Error::Corrupt("entry name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Corrupt("entry name not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Corrupt(format!("rank {rank} of {name}")));
            }
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            if count > 1 << 28 {
                return Err(Error::Corrupt(format!("entry {name} too large")));
            }
            let mut buf = vec![0u8; count * 4];
            r.read_exact(&mut buf)?;
            let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            ck.entries.insert(name, Tensor { shape, data });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

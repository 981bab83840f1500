//! Binary checkpoint container shared by every model kind.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"USRHAN01"
//! kind     str
//! meta     u32 count, then (key str, value str) pairs
//! lists    u32 count, then (name str, u32 n, n × str)
//! tensors  u32 count, then (name str, u32 rank, rank × u64 dim, numel × f64)
//! str    = u32 byte length + UTF-8 bytes
//! ```
//!
//! Values are stored as `f64` bit patterns, so `f64` and `f32` parameters
//! round-trip exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"USRHAN01";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub lists: BTreeMap<String, Vec<String>>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), ..Default::default() }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("missing meta key {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key:?}")))
    }

    pub fn push_tensor<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        self.tensors.push(NamedTensor { name: name.into(), shape: t.shape().to_vec(), data: t.to_f64_vec() });
    }

    pub fn push_vec(&mut self, name: impl Into<String>, data: &[f64]) {
        self.tensors.push(NamedTensor { name: name.into(), shape: vec![data.len()], data: data.to_vec() });
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Copies a stored tensor into `dst`, which must already have its shape.
    pub fn load_into<S: Scalar>(&self, name: &str, dst: &mut Tensor<S>) -> Result<()> {
        let t = self.tensor(name)?;
        if t.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                t.shape,
                dst.shape()
            )));
        }
        for (d, &v) in dst.data_mut().iter_mut().zip(&t.data) {
            *d = S::of(v);
        }
        Ok(())
    }

    pub fn list(&self, name: &str) -> Result<&[String]> {
        self.lists.get(name).map(Vec::as_slice).ok_or_else(|| Error::Checkpoint(format!("missing list {name:?}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_str(&mut w, &self.kind)?;
        write_u32(&mut w, self.meta.len())?;
        for (k, v) in &self.meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        write_u32(&mut w, self.lists.len())?;
        for (name, items) in &self.lists {
            write_str(&mut w, name)?;
            write_u32(&mut w, items.len())?;
            for s in items {
                write_str(&mut w, s)?;
            }
        }
        write_u32(&mut w, self.tensors.len())?;
        for t in &self.tensors {
            write_str(&mut w, &t.name)?;
            write_u32(&mut w, t.shape.len())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 8);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let kind = read_str(&mut r)?;
        let mut meta = BTreeMap::new();
        for _ in 0..read_u32(&mut r)? {
            let k = read_str(&mut r)?;
            meta.insert(k, read_str(&mut r)?);
        }
        let mut lists = BTreeMap::new();
        for _ in 0..read_u32(&mut r)? {
            let name = read_str(&mut r)?;
            let n = read_u32(&mut r)?;
            let items = (0..n).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
            lists.insert(name, items);
        }
        let mut tensors = Vec::new();
        for _ in 0..read_u32(&mut r)? {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 8];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { kind, meta, lists, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint("length exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

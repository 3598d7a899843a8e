//! Named trainable parameters and their binary model-file encoding.
//!
//! Model file layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   b"FAIRINT\0"
//! version    u32       currently 1
//! meta_len   u64       byte length of the metadata block
//! meta       meta_len  UTF-8 JSON (may be empty)
//! count      u32       number of parameter records
//! record*    count times:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   ndim     u32
//!   dims     ndim x u64
//!   values   product(dims) x f64
//! ```

use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"FAIRINT\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Serializes the store after a metadata block.
    pub fn to_bytes(&self, meta: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + meta.len() + self.size() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let shape = p.tensor.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`ParamStore::to_bytes`]; returns the metadata block too.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Vec<u8>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta = r.take(meta_len)?.to_vec();
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Format(format!("parameter name: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, values).map_err(|e| Error::Format(e.to_string()))?;
            store
                .add(name, tensor)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok((store, meta))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// One gradient buffer per parameter, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    bufs: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros(store: &ParamStore) -> Self {
        ParamGrads {
            bufs: store
                .params
                .iter()
                .map(|p| vec![0.0; p.tensor.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }
}

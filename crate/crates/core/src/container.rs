//! "FVW1" tensor container shared by network weights and beamformer banks.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"FVW1" | version: u32 | header_len: u32 | header (JSON, header_len bytes) | payload
//! ```
//!
//! The header lists every tensor as `{name, dtype, shape, offset}` where
//! `offset` is a byte offset into the payload, plus a free-form string map of
//! metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FVW1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    meta: BTreeMap<String, String>,
    tensors: Vec<HeaderEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: TensorData) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        let data = TensorData::F32(values.iter().map(|&v| v as f32).collect());
        self.push(name, shape, data);
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        self.push(name, shape, TensorData::F64(values.to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Fetches a tensor and checks it against the expected shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Container(format!(
                "tensor `{name}` has shape {:?}, architecture expects {:?}",
                t.shape, shape
            )));
        }
        Ok(t)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Container(format!("missing metadata `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            entries.push(HeaderEntry {
                name: t.name.clone(),
                dtype: t.data.dtype(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len() * t.data.dtype().size();
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .expect("header serializes");

        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Container("truncated preamble".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Container(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(12..12 + header_len)
            .ok_or_else(|| Error::Container("truncated header".into()))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Container(format!("header: {e}")))?;
        let payload = &bytes[12 + header_len..];

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let count: usize = e.shape.iter().product();
            let size = e.dtype.size();
            let raw = payload
                .get(e.offset..e.offset + count * size)
                .ok_or_else(|| Error::Container(format!("truncated payload for `{}`", e.name)))?;
            let data = match e.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.meta.insert("kind".into(), "test".into());
        c.push_f32("a", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        c.push_f64("b", &[2], &[std::f64::consts::PI, -1e-300]);
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta("kind").unwrap(), "test");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut bytes = sample().to_bytes();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
        assert!(Container::from_bytes(&good[..good.len() - 3]).is_err());
        assert!(Container::from_bytes(&good[..20]).is_err());
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(Container::from_bytes(&v2).is_err());
    }

    #[test]
    fn expect_checks_shape() {
        let c = sample();
        assert!(c.expect("a", &[2, 3]).is_ok());
        assert!(c.expect("a", &[3, 2]).is_err());
        assert!(c.expect("missing", &[1]).is_err());
    }
}

//! Named-tensor archive used for codec weights and training checkpoints.
//!
//! Layout (little-endian): magic `LFTA`, u16 version, u16 reserved,
//! u32 metadata length + JSON metadata, u32 tensor count, then per tensor:
//! u16 name length + name, u8 dtype (1 = f32, 2 = f64), u8 rank,
//! u32 per dimension, payload.

use std::path::Path;

use serde_json::Value;

use super::chipfile::Cursor;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"LFTA";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
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

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub meta: Value,
    pub entries: Vec<ArchiveEntry>,
}

impl Default for TensorArchive {
    fn default() -> Self {
        Self::new(Value::Object(Default::default()))
    }
}

impl TensorArchive {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.entries.push(ArchiveEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::F32(data),
        });
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.entries.push(ArchiveEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::F64(data),
        });
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn f32(&self, name: &str) -> Result<&[f32]> {
        match self.get(name).map(|e| &e.data) {
            Some(TensorData::F32(v)) => Ok(v),
            Some(_) => Err(Error::Parse(format!("archive tensor {name} is not f32"))),
            None => Err(Error::Parse(format!("archive is missing tensor {name}"))),
        }
    }

    pub fn f64(&self, name: &str) -> Result<&[f64]> {
        match self.get(name).map(|e| &e.data) {
            Some(TensorData::F64(v)) => Ok(v),
            Some(_) => Err(Error::Parse(format!("archive tensor {name} is not f64"))),
            None => Err(Error::Parse(format!("archive is missing tensor {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes, "archive");
        if cur.take(4)? != ARCHIVE_MAGIC {
            return Err(Error::Parse("archive: bad magic".into()));
        }
        let version = cur.u16()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Parse(format!("archive: unsupported version {version}")));
        }
        cur.u16()?;
        let meta_len = cur.u32()? as usize;
        let meta: Value = serde_json::from_slice(cur.take(meta_len)?)
            .map_err(|e| Error::Parse(format!("archive: metadata: {e}")))?;
        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = cur.string()?;
            let dtype = cur.u8()?;
            let rank = cur.u8()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Parse(format!("archive: tensor {name} shape overflows")))?;
            let data = match dtype {
                1 => TensorData::F32(cur.f32_payload(n, false)?),
                2 => {
                    let expected = n
                        .checked_mul(8)
                        .ok_or_else(|| Error::Parse("archive: payload size overflows".into()))?;
                    if cur.remaining() < expected {
                        return Err(Error::Parse(format!(
                            "archive: tensor {name} payload has {} bytes, expected {expected}",
                            cur.remaining()
                        )));
                    }
                    TensorData::F64(
                        cur.take(expected)?
                            .chunks_exact(8)
                            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => return Err(Error::Parse(format!("archive: tensor {name} has dtype {other}"))),
            };
            entries.push(ArchiveEntry { name, shape, data });
        }
        if cur.remaining() != 0 {
            return Err(Error::Parse(format!("archive: {} trailing bytes", cur.remaining())));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = TensorArchive::new(serde_json::json!({"kind": "vq", "step": 12}));
        a.push_f32("w", &[2, 3], vec![0.5, -1.0, 2.0, 3.0, f32::EPSILON, 0.0]);
        a.push_f64("m", &[2], vec![1e-300, -7.25]);
        a.push_f32("scalar", &[], vec![4.0]);
        let back = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.f64("m").unwrap()[0], 1e-300);
        assert!(back.f64("w").is_err());
        assert!(back.f32("missing").is_err());
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let mut a = TensorArchive::default();
        a.push_f32("w", &[4], vec![1.0; 4]);
        let bytes = a.to_bytes();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(TensorArchive::from_bytes(&bytes[..cut]), Err(Error::Parse(_))));
        }
    }
}

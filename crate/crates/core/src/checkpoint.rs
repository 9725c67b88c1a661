//! Versioned binary checkpoint shared by all trained artifacts.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "SNSLCKPT" | version u32 | header length u64 | header JSON | blobs
//! ```
//!
//! The header names the artifact kind, carries free-form metadata (config,
//! hashes) and lists each blob's name, dtype and shape. Blob payloads follow
//! in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"SNSLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl BlobData {
    fn len(&self) -> usize {
        match self {
            BlobData::F64(v) => v.len(),
            BlobData::U32(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            BlobData::F64(_) => "f64",
            BlobData::U32(_) => "u32",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: BlobData,
}

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blobs: Vec<BlobHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            blobs: Vec::new(),
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.blobs.push(Blob {
            name: name.into(),
            shape,
            trainable: false,
            data: BlobData::F64(data),
        });
    }

    pub fn push_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        self.blobs.push(Blob {
            name: name.into(),
            shape,
            trainable: false,
            data: BlobData::U32(data),
        });
    }

    pub fn push_params(&mut self, prefix: &str, store: &ParamStore) {
        for e in store.entries() {
            self.blobs.push(Blob {
                name: format!("{prefix}{}", e.name),
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
                data: BlobData::F64(e.value.data().to_vec()),
            });
        }
    }

    /// Rebuilds a parameter store from every f64 blob whose name starts
    /// with `prefix`.
    pub fn params(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for b in &self.blobs {
            let Some(name) = b.name.strip_prefix(prefix) else { continue };
            let BlobData::F64(data) = &b.data else { continue };
            let t = Tensor::new(b.shape.clone(), data.clone())?;
            if b.trainable {
                store.add(name, t);
            } else {
                store.add_frozen(name, t);
            }
        }
        Ok(store)
    }

    fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint {} has no blob `{name}`", self.kind)))
    }

    pub fn f64_blob(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let b = self.blob(name)?;
        match &b.data {
            BlobData::F64(v) => Ok((&b.shape, v)),
            _ => Err(Error::Format(format!("blob `{name}` is not f64"))),
        }
    }

    pub fn u32_blob(&self, name: &str) -> Result<(&[usize], &[u32])> {
        let b = self.blob(name)?;
        match &b.data {
            BlobData::U32(v) => Ok((&b.shape, v)),
            _ => Err(Error::Format(format!("blob `{name}` is not u32"))),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )))
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blobs: self
                .blobs
                .iter()
                .map(|b| BlobHeader {
                    name: b.name.clone(),
                    dtype: b.data.dtype().into(),
                    shape: b.shape.clone(),
                    trainable: b.trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blobs {
            let expected: usize = b.shape.iter().product();
            if expected != b.data.len() {
                return Err(Error::Format(format!(
                    "blob `{}` has shape {:?} but {} values",
                    b.name,
                    b.shape,
                    b.data.len()
                )));
            }
            match &b.data {
                BlobData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                BlobData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("corrupt checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 20 + hlen;
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for bh in header.blobs {
            let n: usize = bh.shape.iter().product();
            let data = match bh.dtype.as_str() {
                "f64" => {
                    let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated blob"))?;
                    pos += 8 * n;
                    BlobData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
                "u32" => {
                    let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated blob"))?;
                    pos += 4 * n;
                    BlobData::U32(
                        raw.chunks_exact(4)
                            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                            .collect(),
                    )
                }
                other => return Err(bad(&format!("unknown dtype {other}"))),
            };
            blobs.push(Blob {
                name: bh.name,
                shape: bh.shape,
                trainable: bh.trainable,
                data,
            });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_exactly() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2, 2], vec![0.1, -2.5, 1e-300, f64::MAX]).unwrap());
        store.add_frozen("b", Tensor::vector(vec![std::f64::consts::PI]));
        let mut c = Checkpoint::new("test", serde_json::json!({"k": 3}));
        c.push_params("p/", &store);
        c.push_u32("counts", vec![3], vec![1, 2, u32::MAX]);
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params("p/").unwrap(), store);
        assert_eq!(back.u32_blob("counts").unwrap().1, &[1, 2, u32::MAX]);
        assert!(back.expect_kind("other").is_err());
    }

    #[test]
    fn rejects_corruption() {
        let c = Checkpoint::new("x", serde_json::Value::Null);
        let mut bytes = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}

//! Tensor container used for checkpoints and window datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EVTPCONT"            8-byte magic
//! u64                    manifest length in bytes
//! [u8; len]              UTF-8 JSON manifest
//! [f64; ...]             tensor payloads, concatenated in manifest order
//! ```
//!
//! Each manifest entry records the tensor's name, shape, dtype (`"f64"`),
//! and byte offset/length relative to the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"EVTPCONT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub seed: Option<u64>,
    /// Effective configuration that produced the artifact.
    pub config: Value,
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            seed: None,
            config: Value::Null,
            meta: Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let length = (t.len() * 8) as u64;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        Manifest {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            seed: self.seed,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Artifact("not an edgevtp container (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Artifact("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "container version {} is not supported (expected {FORMAT_VERSION})",
                manifest.version
            )));
        }
        let payload = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.dtype != "f64" {
                return Err(Error::Artifact(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            let raw = payload
                .get(e.offset as usize..(e.offset + e.length) as usize)
                .ok_or_else(|| Error::Artifact(format!("payload for {} out of bounds", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|_| Error::Artifact(format!("tensor {} length disagrees with shape", e.name)))?;
            tensors.push((e.name.clone(), t));
        }
        Ok(Self {
            kind: manifest.kind,
            seed: manifest.seed,
            config: manifest.config,
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Artifact(format!("expected a {kind} container, found {}", self.kind)));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut c = Container::new("checkpoint");
        c.seed = Some(7);
        c.config = serde_json::json!({"d": 8});
        c.push("a", Tensor::from_rows(&[&[1.0, -2.5], &[0.1, 3.0]]).unwrap());
        c.push("b", Tensor::scalar(f64::MIN_POSITIVE));
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let m = c.manifest();
        assert_eq!(m.tensors[1].offset, 32);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"hello world, not a container").is_err());
    }
}

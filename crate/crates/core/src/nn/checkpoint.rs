//! `UAF1` parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "UAF1" | u64 manifest_len | manifest (UTF-8 JSON) | f32 payload
//! ```
//!
//! The manifest is `{"meta": <any>, "tensors": [{"name", "shape", "offset"}]}`
//! where `offset` is the byte offset of the tensor inside the payload.
//! Tensors are written in ascending name order.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UAF1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, tensors: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest { meta: self.meta.clone(), tensors })
            .expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.write_u64::<LittleEndian>(manifest.len() as u64).unwrap();
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let len = cur.read_u64::<LittleEndian>().map_err(|_| bad("missing manifest length"))? as usize;
        let start = 12usize;
        let end = start.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[start..end])?;
        let payload = &bytes[end..];
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let from = e.offset as usize;
            let to = from + 4 * n;
            if to > payload.len() {
                return Err(bad(format!("tensor '{}' runs past the end of the payload", e.name)));
            }
            let mut rd = &payload[from..to];
            let mut data = vec![0f32; n];
            rd.read_f32_into::<LittleEndian>(&mut data).map_err(|_| bad("payload read"))?;
            tensors.insert(e.name.clone(), Tensor::new(e.shape, data)?);
        }
        Ok(Self { meta: manifest.meta, tensors })
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

    /// Stores every network parameter under its dotted name.
    pub fn insert_params<T: Real>(&mut self, prefix: &str, params: &NetworkParams<Tensor<T>>) {
        for (name, t) in params.named() {
            self.tensors.insert(format!("{prefix}{name}"), t.cast());
        }
    }

    /// Overwrites `params` from tensors stored under `prefix`; every
    /// parameter must be present with a matching shape.
    pub fn restore_params<T: Real>(&self, prefix: &str, params: &mut NetworkParams<Tensor<T>>) -> Result<()> {
        let mut err = None;
        params.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match self.tensors.get(&key) {
                Some(src) if src.shape() == t.shape() => *t = src.cast(),
                Some(src) => err = Some(bad(format!("'{key}' has shape {:?}, expected {:?}", src.shape(), t.shape()))),
                None => err = Some(bad(format!("missing tensor '{key}'"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

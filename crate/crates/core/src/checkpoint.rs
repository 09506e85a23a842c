//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `GCLPCKPT` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | header length `h` in bytes (`u64`) |
//! | h | UTF-8 JSON header |
//! | 8·k | `f64` payload |
//!
//! The header is `{"version", "dtype", "meta", "entries"}`. `dtype` is
//! always `"f64"`; `meta` is free-form JSON (config echo, epoch, metrics);
//! each entry is `{"name", "shape": [rows, cols], "offset"}` with the offset
//! counted in `f64` elements from the start of the payload. Tensors are
//! stored row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GCLPCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    meta: Value,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Checkpoint {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    /// Adds every parameter of `params` under `group/name`.
    pub fn insert_group(&mut self, group: &str, params: &ParamSet) {
        for (name, p) in params.iter() {
            self.tensors.insert(format!("{group}/{name}"), p.value.clone());
        }
    }

    /// Copies the tensors of `group` into `params`, which must hold exactly
    /// the same names and shapes.
    pub fn restore_group(&self, group: &str, params: &mut ParamSet) -> Result<()> {
        let prefix = format!("{group}/");
        let stored: Vec<&str> = self
            .tensors
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .collect();
        if !stored.iter().copied().eq(params.names()) {
            return Err(Error::Checkpoint(format!("parameter names of group `{group}` do not match")));
        }
        for name in stored {
            params.set_value(name, self.tensors[&format!("{prefix}{name}")].clone())?;
        }
        Ok(())
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}/");
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            version: VERSION,
            dtype: "f64".into(),
            meta: self.meta.clone(),
            entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &bytes[20 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.entries {
            let len = e.shape[0] * e.shape[1];
            let raw = payload
                .get(8 * e.offset..8 * (e.offset + len))
                .ok_or_else(|| Error::Checkpoint(format!("payload too short for `{}`", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(e.name, Tensor::new(e.shape[0], e.shape[1], data)?);
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_exact() {
        let mut ps = ParamSet::new();
        ps.insert("a.w", Tensor::from_fn(2, 3, |i, j| (i as f64 - j as f64) / 7.0));
        ps.insert("a.b", Tensor::row_vector(&[f64::MIN_POSITIVE, -0.0, 1e300]).unwrap());
        let mut ck = Checkpoint::new(json!({"epoch": 3}));
        ck.insert_group("theta", &ps);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = ps.clone();
        fresh.set_value("a.w", Tensor::zeros(2, 3)).unwrap();
        back.restore_group("theta", &mut fresh).unwrap();
        assert_eq!(fresh.fingerprint(), ps.fingerprint());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::new(json!(null)).to_bytes().unwrap();
        bytes[8] = 9;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn mismatched_group_is_an_error() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::ones(1, 1));
        let mut ck = Checkpoint::new(json!({}));
        ck.insert_group("phi1", &ps);
        let mut other = ParamSet::new();
        other.insert("v", Tensor::ones(1, 1));
        assert!(ck.restore_group("phi1", &mut other).is_err());
    }
}

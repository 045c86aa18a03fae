//! Flat binary container of named arrays.
//!
//! ```text
//! bytes 0..8    magic "RADSRCK1"
//! bytes 8..16   header length L, u64 little-endian
//! bytes 16..16+L  UTF-8 JSON header
//! rest          array payloads, little-endian, at the header's offsets
//! ```
//!
//! The header is `{"version": 1, "meta": <any JSON>, "arrays": [{"name",
//! "group", "dtype", "shape", "offset", "nbytes"}]}`; offsets are relative to
//! the start of the payload section and `shape` is `[N, C, H, W]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Shape, Tensor};
use super::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RADSRCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub group: String,
    pub dtype: String,
    pub shape: [usize; 4],
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

/// Named parameter groups plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub groups: Vec<(String, ParamStore<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn group(&self, name: &str) -> Option<&ParamStore<T>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut arrays = Vec::new();
        for (group, store) in &self.groups {
            for p in store.iter() {
                let offset = payload.len();
                p.tensor.data().iter().for_each(|v| v.write_le(&mut payload));
                arrays.push(ArrayEntry {
                    name: p.name.clone(),
                    group: group.clone(),
                    dtype: T::DTYPE.to_string(),
                    shape: p.tensor.shape().dims(),
                    offset,
                    nbytes: payload.len() - offset,
                });
            }
        }
        let header = serde_json::to_vec(&Header {
            version: VERSION,
            meta: self.meta.clone(),
            arrays,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses a container, converting arrays of either float width to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let payload = &bytes[header_end..];
        let mut groups: Vec<(String, ParamStore<T>)> = Vec::new();
        for a in header.arrays {
            let width = match a.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
            };
            let [n, c, h, w] = a.shape;
            let shape = Shape::new(n, c, h, w);
            if a.nbytes != shape.numel() * width {
                return Err(Error::Checkpoint(format!("{}: size does not match shape", a.name)));
            }
            let raw = a
                .offset
                .checked_add(a.nbytes)
                .and_then(|end| payload.get(a.offset..end))
                .ok_or_else(|| Error::Checkpoint(format!("{}: payload out of range", a.name)))?;
            let data: Vec<T> = raw
                .chunks_exact(width)
                .map(|b| if width == 4 { T::of(f32::read_le(b) as f64) } else { T::of(f64::read_le(b)) })
                .collect();
            let idx = match groups.iter().position(|(g, _)| *g == a.group) {
                Some(i) => i,
                None => {
                    groups.push((a.group.clone(), ParamStore::new()));
                    groups.len() - 1
                }
            };
            groups[idx]
                .1
                .push(a.name, Tensor::from_vec(shape, data)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(Checkpoint {
            meta: header.meta,
            groups,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

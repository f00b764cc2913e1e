//! Named-tensor checkpoint container.
//!
//! ```text
//! b"ELEVCKPT" | u32 version | u64 header length | JSON header | payload
//! ```
//!
//! All integers are little-endian. The header lists every tensor's name,
//! shape, dtype, and byte range in the payload; values are `f64`
//! little-endian, row-major.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 8] = b"ELEVCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: usize,
    nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    config: serde_json::Value,
    step: u64,
    tensors: Vec<TensorRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Array2<f64>)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut records = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = payload.len();
            for v in t.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            records.push(TensorRecord {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                dtype: "f64".into(),
                offset,
                nbytes: payload.len() - offset,
            });
        }
        let header = serde_json::to_vec(&Header {
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            step: self.step,
            tensors: records,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for r in header.tensors {
            let n = r.shape[0] * r.shape[1];
            if r.dtype != "f64" || r.nbytes != 8 * n {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has inconsistent dtype or size",
                    r.name
                )));
            }
            let end = r
                .offset
                .checked_add(r.nbytes)
                .filter(|&e| e <= payload.len());
            let Some(end) = end else {
                return Err(Error::Checkpoint(format!("tensor {} is truncated", r.name)));
            };
            let data = payload[r.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((
                r.name,
                Array2::from_shape_vec((r.shape[0], r.shape[1]), data).unwrap(),
            ));
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            config: header.config,
            step: header.step,
            tensors,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

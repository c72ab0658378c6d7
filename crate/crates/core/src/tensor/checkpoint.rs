//! `S2RCKPT1` files: a text manifest followed by little-endian `f32` payloads in
//! manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Real, Tensor, TensorError};
use crate::io::{write_atomic, Header};

pub const CHECKPOINT_MAGIC: &str = "S2RCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// Named tensors plus string metadata (values must be single-line).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub meta: BTreeMap<String, String>,
}

fn err(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push(CheckpointEntry {
            name: name.into(),
            tensor: t.cast(),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut h = Header::new(CHECKPOINT_MAGIC);
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(err(format!("meta entry {k:?} is not single-line")));
            }
            h.push("meta", format!("{k} {v}"));
        }
        let mut payload = Vec::new();
        for e in &self.entries {
            if e.name.is_empty() || e.name.contains(char::is_whitespace) {
                return Err(err(format!("bad tensor name {:?}", e.name)));
            }
            let dims: Vec<String> = e.tensor.shape().iter().map(|d| d.to_string()).collect();
            h.push("tensor", format!("{} f32 [{}]", e.name, dims.join(",")));
            for v in e.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(h.encode(&payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if !bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
            return Err(err("missing S2RCKPT1 magic"));
        }
        let (h, mut payload) = Header::decode(bytes).map_err(|e| err(e.to_string()))?;
        h.expect_schema(CHECKPOINT_MAGIC)
            .map_err(|e| err(e.to_string()))?;
        let mut ck = Checkpoint::new();
        for m in h.get_all("meta") {
            let (k, v) = m.split_once(' ').unwrap_or((m, ""));
            ck.meta.insert(k.to_string(), v.to_string());
        }
        for line in h.get_all("tensor") {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, dtype, dims] = parts[..] else {
                return Err(err(format!("malformed tensor line {line:?}")));
            };
            if dtype != "f32" {
                return Err(err(format!("unsupported dtype {dtype}")));
            }
            let inner = dims
                .strip_prefix('[')
                .and_then(|d| d.strip_suffix(']'))
                .ok_or_else(|| err(format!("malformed shape {dims}")))?;
            let shape = inner
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| err(format!("malformed shape {dims}")))?;
            let n: usize = shape.iter().product();
            if payload.len() < 4 * n {
                return Err(err(format!("payload truncated in tensor {name}")));
            }
            let data = payload[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload = &payload[4 * n..];
            ck.entries.push(CheckpointEntry {
                name: name.to_string(),
                tensor: Tensor::new(&shape, data)?,
            });
        }
        if !payload.is_empty() {
            return Err(err(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        write_atomic(path, &self.to_bytes()?).map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `MEMLABCK`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the UTF-8 JSON header
//! `{config, step_count, tensors: [{name, shape, offset}]}` (offsets counted
//! in elements), then every parameter as little-endian `f32` in index order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layout::TensorEntry;
use super::model::MicroModel;
use crate::error::{LabError, Result};

const MAGIC: &[u8; 8] = b"MEMLABCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step_count: u64,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &MicroModel, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        step_count: model.step_count(),
        tensors: model.layout().entries().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + 4 * model.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MicroModel> {
    let bad = |reason: String| LabError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..body])?;
    let data = &bytes[body..];
    if data.len() % 4 != 0 {
        return Err(bad("tensor data is not a whole number of f32".into()));
    }
    let flat: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let model = MicroModel::from_parts(header.config, flat, header.step_count).map_err(|e| bad(e.to_string()))?;
    if model.layout().entries() != header.tensors.as_slice() {
        return Err(bad("tensor index does not match the architecture".into()));
    }
    Ok(model)
}

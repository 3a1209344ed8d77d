//! Model checkpoints: JSON header (arch id, entry names and shapes)
//! followed by little-endian f32 tensor payloads in declared order.
//!
//! In-memory parameters are f64; saving quantizes to f32, so
//! `save(load(file))` reproduces the file bytes exactly and
//! `load(save(params))` is exact whenever the values are f32-representable
//! (checkpoints always are).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use voxseg_core::nn::{ArchId, ModelParams};

use crate::error::{PipelineError, Result};

const MAGIC: &[u8; 8] = b"VSEGCKPT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CkptHeader {
    arch_id: String,
    entries: Vec<EntryHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let header = CkptHeader {
        arch_id: params.arch().as_str().to_string(),
        entries: params
            .entries()
            .iter()
            .map(|(name, t)| EntryHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| PipelineError::format(path, e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in params.entries() {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(PipelineError::format(path, "not a checkpoint file"));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let body = 12 + hlen;
    if bytes.len() < body {
        return Err(PipelineError::format(path, "truncated header"));
    }
    let header: CkptHeader = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| PipelineError::format(path, format!("bad header: {e}")))?;
    let arch = ArchId::parse(&header.arch_id)?;

    let mut offset = body;
    let mut raw = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let n: usize = e.shape.iter().product();
        let end = offset + n * 4;
        if bytes.len() < end {
            return Err(PipelineError::format(
                path,
                format!("tensor '{}' payload truncated", e.name),
            ));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        raw.push((e.name, e.shape, data));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(PipelineError::format(path, "trailing bytes after tensors"));
    }
    Ok(ModelParams::from_entries(arch, raw)?)
}

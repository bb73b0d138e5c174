//! Binary checkpoint format: 8-byte magic, little-endian u32 header length,
//! JSON header (config + tensor manifest), then the raw f32 payload.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MaskedLmModel, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLMCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::BadCheckpoint { path: path.display().to_string(), reason: reason.into() }
}

pub fn save(model: &MaskedLmModel, path: &Path) -> Result<(), ModelError> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (_, p) in model.params().iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { config: model.config().clone(), manifest };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| bad(path, format!("header serialization failed: {e}")))?;

    let mut bytes = Vec::with_capacity(12 + header_json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<MaskedLmModel, ModelError> {
    let bytes = std::fs::read(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad(path, "missing or wrong magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(bad(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| bad(path, format!("bad header: {e}")))?;
    header.config.validate()?;

    let payload = &bytes[12 + header_len..];
    let mut expected_offset = 0usize;
    for entry in &header.manifest {
        if entry.offset != expected_offset {
            return Err(bad(
                path,
                format!("manifest offset for {} is {}, expected {}", entry.name, entry.offset, expected_offset),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        expected_offset += numel * 4;
    }
    if payload.len() != expected_offset {
        return Err(bad(
            path,
            format!("payload length {} does not match manifest total {}", payload.len(), expected_offset),
        ));
    }

    // Rebuild the architecture for the config, then overwrite every tensor.
    let mut model = MaskedLmModel::init(header.config.clone())?;
    let mut by_name: HashMap<String, crate::tensor::ParamId> =
        model.params().iter().map(|(id, p)| (p.name.clone(), id)).collect();
    for entry in &header.manifest {
        let id = by_name
            .remove(&entry.name)
            .ok_or_else(|| bad(path, format!("unknown tensor name {:?}", entry.name)))?;
        let p = model.params_mut().get_mut(id);
        if p.value.shape() != entry.shape.as_slice() {
            return Err(bad(
                path,
                format!(
                    "tensor {} has shape {:?}, config requires {:?}",
                    entry.name,
                    entry.shape,
                    p.value.shape()
                ),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        let raw = &payload[entry.offset..entry.offset + numel * 4];
        for (slot, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if let Some(missing) = by_name.keys().next() {
        return Err(bad(path, format!("tensor {missing:?} missing from checkpoint")));
    }
    Ok(model)
}

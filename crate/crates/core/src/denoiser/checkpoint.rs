//! Checkpoint container: raw little-endian `f32` tensors in a `.bin` file and
//! a JSON manifest with shapes, partition labels, config and content hash.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenoiserConfig, DenoiserParams, ParamGroup, PartitionLabel};
use crate::error::{Result, VmcError};

pub const CHECKPOINT_FORMAT: &str = "vmc-denoiser-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub label: PartitionLabel,
    pub group: ParamGroup,
    /// Offset into the `.bin` file, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: DenoiserConfig,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the `.bin` payload.
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

fn stem_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut bin = stem.clone().into_os_string();
    bin.push(".bin");
    let mut json = stem.into_os_string();
    json.push(".json");
    (PathBuf::from(bin), PathBuf::from(json))
}

/// Writes `<path>.bin` and `<path>.json`.
pub fn save_checkpoint(
    params: &DenoiserParams,
    path: &Path,
    provenance: Option<serde_json::Value>,
) -> Result<CheckpointManifest> {
    let (bin_path, json_path) = stem_paths(path);
    let mut payload = Vec::with_capacity(params.parameter_count() * 4);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (spec, tensor) in params.specs().iter().zip(params.tensors()) {
        for v in tensor.iter() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: spec.name.clone(),
            shape: [spec.shape.0, spec.shape.1],
            label: spec.group.label(),
            group: spec.group,
            offset,
        });
        offset += tensor.len();
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        config: params.config().clone(),
        tensors: entries,
        content_hash: hex::encode(Sha256::digest(&payload)),
        provenance,
    };
    if let Some(dir) = bin_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&bin_path, &payload)?;
    fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, CheckpointManifest)> {
    let (bin_path, json_path) = stem_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| {
        VmcError::Checkpoint(format!("cannot read manifest {}: {e}", json_path.display()))
    })?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(VmcError::Checkpoint(format!(
            "unsupported format `{}`",
            manifest.format
        )));
    }
    let payload = fs::read(&bin_path).map_err(|e| {
        VmcError::Checkpoint(format!("cannot read payload {}: {e}", bin_path.display()))
    })?;
    let found = hex::encode(Sha256::digest(&payload));
    if found != manifest.content_hash {
        return Err(VmcError::HashMismatch {
            what: bin_path.display().to_string(),
            expected: manifest.content_hash.clone(),
            found,
        });
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let len = entry.shape[0] * entry.shape[1];
        let end = entry.offset + len;
        if end > floats.len() {
            return Err(VmcError::Checkpoint(format!(
                "{} runs past the end of the payload",
                entry.name
            )));
        }
        let t = Array2::from_shape_vec(
            (entry.shape[0], entry.shape[1]),
            floats[entry.offset..end].to_vec(),
        )
        .map_err(|e| VmcError::Checkpoint(e.to_string()))?;
        tensors.push(t);
    }
    let params = DenoiserParams::from_tensors(&manifest.config, tensors)?;
    for (spec, entry) in params.specs().iter().zip(&manifest.tensors) {
        if spec.name != entry.name || spec.group != entry.group {
            return Err(VmcError::Checkpoint(format!(
                "tensor `{}` does not match layout slot `{}`",
                entry.name, spec.name
            )));
        }
    }
    Ok((params, manifest))
}

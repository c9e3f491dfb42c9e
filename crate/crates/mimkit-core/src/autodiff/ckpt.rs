//! Checkpoint persistence: a JSON manifest plus one raw little-endian
//! float32 blob. Loading what was saved is bit-exact for f32 tensors.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named tensor in a checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    parameters: Vec<CheckpointEntry>,
}

/// Writes tensors to `<stem>.json` + `<stem>.bin`.
///
/// Entries are sorted by name so identical contents always produce
/// identical bytes.
pub fn save_checkpoint<F: Scalar>(
    stem: &Path,
    tensors: &[(String, &Tensor<F>)],
) -> Result<()> {
    let mut sorted: Vec<&(String, &Tensor<F>)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut entries = Vec::with_capacity(sorted.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in sorted {
        entries.push(CheckpointEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f32".to_string(),
            byte_offset: blob.len() as u64,
        });
        for v in tensor.data() {
            blob.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: 1,
        parameters: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    atomic_write(&manifest_path(stem), &json)?;
    atomic_write(&blob_path(stem), &blob)?;
    Ok(())
}

/// Reads a checkpoint back as named tensors.
pub fn load_checkpoint<F: Scalar>(stem: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let json = fs::read(manifest_path(stem))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&json)?;
    if manifest.version != 1 {
        return Err(Error::Manifest(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let blob = fs::read(blob_path(stem))?;
    let mut out = Vec::with_capacity(manifest.parameters.len());
    for entry in &manifest.parameters {
        if entry.dtype != "f32" {
            return Err(Error::Manifest(format!(
                "unsupported dtype {} for {}",
                entry.dtype, entry.name
            )));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + n * 4;
        if end > blob.len() {
            return Err(Error::Manifest(format!(
                "blob too short for tensor {} ({} > {})",
                entry.name,
                end,
                blob.len()
            )));
        }
        let data: Vec<F> = blob[start..end]
            .chunks_exact(4)
            .map(|c| F::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)?));
    }
    Ok(out)
}

/// Manifest file of a checkpoint stem. Extensions are appended (not
/// replaced) so dotted stems like `bundle.opt` stay distinct.
pub fn manifest_path(stem: &Path) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.json", stem.display()))
}

/// Blob file of a checkpoint stem.
pub fn blob_path(stem: &Path) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.bin", stem.display()))
}

/// Write-then-rename so partially written files never shadow good ones.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

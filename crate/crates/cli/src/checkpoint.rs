//! Model checkpoints.
//!
//! A checkpoint at base path `P` is `P.toml`, the manifest, and `P.bin`, the
//! payload. The manifest holds `format_version`, `config_hash`, `payload` (the
//! blob's file name) and one `[[params]]` entry (`name`, `shape`) per tensor in
//! name order. The payload is every tensor's values as `f32` little-endian, in
//! manifest order, with nothing else in the file.

use std::fs;
use std::path::{Path, PathBuf};

use midt_core::{ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub payload: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("toml"), base.with_extension("bin"))
}

/// Rounds every value through `f32`, the precision a checkpoint keeps.
pub fn quantize(store: &ParameterStore) -> ParameterStore {
    let mut out = ParameterStore::new();
    for (name, t) in store.values() {
        out.insert(name.clone(), t.map(|v| v as f32 as f64));
    }
    out
}

pub fn save_checkpoint(store: &ParameterStore, base: &Path, config_hash: &str) -> CliResult<()> {
    let (manifest_path, blob_path) = paths(base);
    let mut blob = Vec::with_capacity(4 * store.scalar_count());
    let mut params = Vec::with_capacity(store.len());
    for (name, t) in store.values() {
        params.push(ParamEntry { name: name.clone(), shape: t.shape().to_vec() });
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let payload = blob_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest =
        Manifest { format_version: CHECKPOINT_VERSION, config_hash: config_hash.to_string(), payload, params };
    let text = toml::to_string(&manifest).map_err(|e| CliError::checkpoint(&manifest_path, e.to_string()))?;
    fs::write(&manifest_path, text).map_err(CliError::io(&manifest_path))?;
    fs::write(&blob_path, blob).map_err(CliError::io(&blob_path))?;
    Ok(())
}

/// Loads a checkpoint written for the run with `config_hash` into the layout
/// of `expected`. Names and shapes are checked against `expected` before the
/// payload is read.
pub fn load_checkpoint(base: &Path, expected: &ParameterStore, config_hash: &str) -> CliResult<ParameterStore> {
    let (manifest_path, _) = paths(base);
    if !manifest_path.exists() {
        return Err(CliError::MissingFile(manifest_path));
    }
    let fail = |m: String| CliError::checkpoint(&manifest_path, m);
    let text = fs::read_to_string(&manifest_path).map_err(CliError::io(&manifest_path))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| fail(format!("malformed manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.config_hash != config_hash {
        return Err(fail(format!("written for config {}, current config is {config_hash}", manifest.config_hash)));
    }
    for p in &manifest.params {
        match expected.get(&p.name) {
            None => return Err(fail(format!("parameter `{}` is not part of the model", p.name))),
            Some(t) if t.shape() != p.shape.as_slice() => {
                return Err(fail(format!(
                    "parameter `{}` has shape {:?}, the model expects {:?}",
                    p.name,
                    p.shape,
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(missing) = expected.names().find(|n| !manifest.params.iter().any(|p| p.name == *n)) {
        return Err(fail(format!("parameter `{missing}` is missing")));
    }
    let blob_path = manifest_path.with_file_name(&manifest.payload);
    if !blob_path.exists() {
        return Err(CliError::MissingFile(blob_path));
    }
    let blob = fs::read(&blob_path).map_err(CliError::io(&blob_path))?;
    let count: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != 4 * count {
        return Err(CliError::checkpoint(
            &blob_path,
            format!("payload length mismatch: expected {} bytes, found {}", 4 * count, blob.len()),
        ));
    }
    let mut values = blob.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut store = ParameterStore::new();
    for p in &manifest.params {
        let n = p.shape.iter().product();
        store.insert(p.name.clone(), Tensor::new(p.shape.clone(), values.by_ref().take(n).collect()));
    }
    Ok(store)
}

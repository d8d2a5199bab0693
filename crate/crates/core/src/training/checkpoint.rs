//! Checkpoint directories: `manifest.json` plus one little-endian f32 blob.
//!
//! The manifest lists every tensor (parameter values, buffers and the Adam
//! moments) with its shape and byte offset, the model configuration, the
//! trained stages, optimizer step counters, training progress and the
//! SHA-256 of the blob. Both files are written to temporaries and renamed
//! into place, blob first.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{WdnConfig, WdnModel};
use crate::params::ParamKind;
use crate::tensor::{Real, Tensor};

pub const FORMAT_VERSION: &str = "wdn-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format {found:?} is not supported (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("tensor {name} has shape {found:?} in the checkpoint but {expected:?} in the model")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("tensor {name} is missing from the checkpoint")]
    MissingTensor { name: String },
    #[error("blob is truncated: {found} bytes, manifest expects {expected}")]
    Truncated { found: u64, expected: u64 },
    #[error("blob hash mismatch: the checkpoint is corrupted")]
    Integrity,
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CheckpointError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Version { .. } => "version_mismatch",
            CheckpointError::ShapeMismatch { .. } => "shape_mismatch",
            CheckpointError::MissingTensor { .. } => "missing_tensor",
            CheckpointError::Truncated { .. } => "truncated",
            CheckpointError::Integrity => "integrity",
            CheckpointError::Malformed(_) => "malformed",
            CheckpointError::Io { .. } => "io",
        }
    }
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Value,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

/// Per-stage training counters, used to resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epochs: [usize; 3],
    pub steps: [u64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub config: WdnConfig,
    pub stages: Vec<u8>,
    pub progress: Progress,
    /// Adam step counter per parameter.
    pub adam_steps: BTreeMap<String, u64>,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: u64,
    pub sha256: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

/// Writes `model` (and its optimizer state) to `dir`.
pub fn save<T: Real>(model: &WdnModel<T>, progress: &Progress, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut adam_steps = BTreeMap::new();
    let mut push = |name: String, role: TensorRole, t: &Tensor<T>, blob: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name,
            role,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: blob.len() as u64,
        });
        for &v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    };
    for store in model.stores() {
        for (name, p) in store.iter() {
            let q = store.qualified(name);
            push(q.clone(), TensorRole::Value, &p.value, &mut blob);
            if p.kind == ParamKind::Trainable {
                push(q.clone(), TensorRole::AdamM, &p.m, &mut blob);
                push(q.clone(), TensorRole::AdamV, &p.v, &mut blob);
                adam_steps.insert(q, p.t);
            }
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        config: model.config.clone(),
        stages: (1..=3u8).filter(|&s| model.trained[s as usize - 1]).collect(),
        progress: progress.clone(),
        adam_steps,
        tensors,
        blob_bytes: blob.len() as u64,
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

/// Reads and version-checks the manifest alone.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_str()).unwrap_or("<none>");
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    serde_json::from_value(raw).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

fn read_blob(dir: &Path, manifest: &Manifest) -> Result<Vec<u8>> {
    let path = dir.join(BLOB_FILE);
    let blob = fs::read(&path).map_err(io(&path))?;
    if (blob.len() as u64) < manifest.blob_bytes {
        return Err(CheckpointError::Truncated {
            found: blob.len() as u64,
            expected: manifest.blob_bytes,
        });
    }
    if blob.len() as u64 != manifest.blob_bytes || hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(CheckpointError::Integrity);
    }
    Ok(blob)
}

fn decode<T: Real>(blob: &[u8], entry: &TensorEntry) -> Result<Tensor<T>> {
    let n: usize = entry.shape.iter().product();
    let start = entry.offset as usize;
    let end = start + 4 * n;
    let bytes = blob
        .get(start..end)
        .ok_or_else(|| CheckpointError::Malformed(format!("tensor {} lies outside the blob", entry.name)))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Tensor::from_vec(&entry.shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

/// Loads parameters, buffers and optimizer state into an existing model.
/// Every tensor of the model must be present with a matching shape.
pub fn load_into<T: Real>(model: &mut WdnModel<T>, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let blob = read_blob(dir, &manifest)?;
    let index: BTreeMap<(&str, TensorRole), &TensorEntry> = manifest
        .tensors
        .iter()
        .map(|e| ((e.name.as_str(), e.role), e))
        .collect();
    let fetch = |name: &str, role: TensorRole, expected: &[usize]| -> Result<Tensor<T>> {
        let entry = index
            .get(&(name, role))
            .ok_or_else(|| CheckpointError::MissingTensor { name: name.to_string() })?;
        if entry.shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: entry.shape.clone(),
                expected: expected.to_vec(),
            });
        }
        decode(&blob, entry)
    };
    // Validate everything before mutating the model.
    let mut staged = Vec::new();
    for store in model.stores() {
        for (name, p) in store.iter() {
            let q = store.qualified(name);
            let shape = p.value.shape();
            let value = fetch(&q, TensorRole::Value, shape)?;
            let moments = if p.kind == ParamKind::Trainable {
                Some((
                    fetch(&q, TensorRole::AdamM, shape)?,
                    fetch(&q, TensorRole::AdamV, shape)?,
                    manifest.adam_steps.get(&q).copied().unwrap_or(0),
                ))
            } else {
                None
            };
            staged.push((value, moments));
        }
    }
    let mut staged = staged.into_iter();
    for store in model.stores_mut() {
        for (_, p) in store.iter_mut() {
            let (value, moments) = staged.next().expect("staged tensor per parameter");
            p.value = value;
            if let Some((m, v, t)) = moments {
                p.m = m;
                p.v = v;
                p.t = t;
            }
        }
    }
    model.trained = [1u8, 2, 3].map(|s| manifest.stages.contains(&s));
    Ok(manifest)
}

/// Builds a model from the manifest's configuration and loads it.
pub fn load<T: Real>(dir: impl AsRef<Path>) -> crate::error::Result<(WdnModel<T>, Manifest)> {
    let manifest = read_manifest(dir.as_ref())?;
    let mut model = WdnModel::new(manifest.config.clone(), 0)?;
    let manifest = load_into(&mut model, dir)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> WdnConfig {
        WdnConfig {
            channels: 2,
            block_depth: 1,
            ..WdnConfig::desk()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = WdnModel::<f32>::new(tiny(), 3).unwrap();
        model.trained = [true, false, false];
        model.stage1[0].store.get_mut("proc0.conv0.w").unwrap().t = 7;
        save(&model, &Progress::default(), dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        let manifest = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let (back, _) = load::<f32>(dir.path()).unwrap();
        assert_eq!(back.trained, [true, false, false]);
        assert_eq!(back.stage1[0].store.get("proc0.conv0.w").unwrap().t, 7);
        for (a, b) in model.stores().iter().zip(back.stores()) {
            for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
                assert_eq!(p.value, q.value);
            }
        }
        let dir2 = tempfile::tempdir().unwrap();
        save(&back, &Progress::default(), dir2.path()).unwrap();
        assert_eq!(fs::read(dir2.path().join(BLOB_FILE)).unwrap(), bytes);
        assert_eq!(fs::read(dir2.path().join(MANIFEST_FILE)).unwrap(), manifest);
    }

    #[test]
    fn error_codes_are_distinct() {
        let errs = [
            CheckpointError::Version {
                found: "a".into(),
                expected: "b".into(),
            },
            CheckpointError::ShapeMismatch {
                name: "x".into(),
                found: vec![],
                expected: vec![],
            },
            CheckpointError::MissingTensor { name: "x".into() },
            CheckpointError::Truncated { found: 0, expected: 1 },
            CheckpointError::Integrity,
            CheckpointError::Malformed("m".into()),
        ];
        let codes: std::collections::BTreeSet<_> = errs.iter().map(|e| e.code()).collect();
        assert_eq!(codes.len(), errs.len());
    }
}

//! Checkpoint directories: `manifest.json` plus one little-endian `f32` blob per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamEntry>,
    /// Caller-supplied context such as the task and training settings.
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn save(model: &Model<f32>, dir: &Path, step: u64, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(model.params.len());
    for (name, m) in model.params.names().iter().zip(model.params.values()) {
        let file = format!("{name}.f32");
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        config: model.config.clone(),
        seed: model.seed,
        step,
        params: entries,
        extra,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&path))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(json_err(&path))
}

pub fn load(dir: &Path) -> Result<(Model<f32>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        if bytes.len() != 4 * e.rows * e.cols {
            return Err(Error::Invalid(format!(
                "{} holds {} bytes, expected {}",
                path.display(),
                bytes.len(),
                4 * e.rows * e.cols
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(e.name.clone(), Matrix::from_vec(e.rows, e.cols, data)?);
    }
    let model = Model::from_params(manifest.config.clone(), manifest.seed, store)?;
    Ok((model, manifest))
}

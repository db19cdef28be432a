//! Model checkpoints: a directory holding `manifest.json` and one TNSR file
//! per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tgan_core::model::{expected_tensors, registry, Model, ModelConfig, ParamStore};
use tgan_core::{DType, Real};

use crate::error::{Error, Result};
use crate::tnsr::{load_any, save_tensor, write_atomic};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// Modelling choices recorded with every checkpoint.
pub const NOTES: [&str; 2] = [
    "batch normalization follows every hidden transposed convolution of the temporal generator, including the first",
    "z0 is drawn from U(-1, 1); the temporal generator's tanh output is used as z1 without rescaling",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub layer: String,
    pub layer_kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: DType,
    /// Training iteration the parameters were taken at, if any.
    pub iteration: Option<u64>,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub notes: Vec<String>,
}

fn layer_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(l, _)| l)
}

/// Write `model` into `dir`, creating it if needed. Existing tensor files
/// are replaced one by one and the manifest is written last.
pub fn save_checkpoint<T: Real>(dir: &Path, model: &Model<T>, iteration: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(model.store.len());
    for (name, t) in model.store.iter() {
        let layer = model.store.layer(layer_of(name))?;
        let file = format!("{name}.tnsr");
        save_tensor(&dir.join(&file), t)?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
            layer: layer.name.clone(),
            layer_kind: layer.kind().name().to_string(),
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        iteration,
        config: model.config.clone(),
        tensors,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_atomic(&path, &json)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::manifest(&path, format!("unsupported checkpoint version {}", m.format_version)));
    }
    Ok(m)
}

/// Load a checkpoint as precision `T`. Tensors stored at another precision
/// are converted.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(Model<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(MANIFEST);
    let mut store = ParamStore::<T>::with_layers(registry(&manifest.config)?);
    for entry in &manifest.tensors {
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(Error::manifest(&path, format!("tensor file {:?} escapes the checkpoint", entry.file)));
        }
        let t = load_any(&dir.join(&entry.file))?;
        if t.dtype() != manifest.dtype {
            return Err(Error::manifest(&path, format!("{} is {}, manifest says {}", entry.file, t.dtype().name(), manifest.dtype.name())));
        }
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::manifest(&path, format!("{} has shape {:?}, manifest says {:?}", entry.file, t.shape(), entry.shape)));
        }
        if store.contains(&entry.name) {
            return Err(Error::manifest(&path, format!("tensor {} listed twice", entry.name)));
        }
        store.insert(&entry.name, t.cast())?;
    }
    let mut expected = 0;
    for layer in store.layers() {
        expected += expected_tensors(layer)?.len();
    }
    if store.len() != expected {
        return Err(Error::manifest(&path, "manifest lists tensors the configuration does not use"));
    }
    Ok((Model::from_parts(manifest.config.clone(), store)?, manifest))
}

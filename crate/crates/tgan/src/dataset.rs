//! Dataset directories: `manifest.json` plus one TNSR file per clip.

use std::fs;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgan_core::data::{synthesize_clip, ClipSet, ClipSource, DataConfig};
use tgan_core::{Real, Tensor};

use crate::error::{Error, Result};
use crate::tnsr::{load_any, save_tensor, write_atomic};

pub const MANIFEST: &str = "manifest.json";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DataConfig,
    /// `[clip_len, C, H, W]`.
    pub clip_shape: Vec<usize>,
    pub clips: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub num_categories: usize,
}

/// Synthesize every clip of `config` into `dir` as f32 tensors. The output
/// depends only on the configuration.
pub fn write_dataset(dir: &Path, config: &DataConfig) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = config.num_clips.to_string().len().max(5);
    let mut clips = Vec::with_capacity(config.num_clips);
    let mut labels = Vec::new();
    for i in 0..config.num_clips {
        let (clip, label) = synthesize_clip::<f32>(config, i)?;
        let file = format!("clip-{i:0width$}.tnsr");
        save_tensor(&dir.join(&file), &clip)?;
        clips.push(file);
        labels.extend(label);
    }
    let manifest = DatasetManifest {
        version: VERSION,
        config: config.clone(),
        clip_shape: vec![config.clip_len, config.channels, config.resolution, config.resolution],
        clips,
        labels: config.labeled.then_some(labels),
        num_categories: config.num_categories(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_atomic(&path, &json)?;
    Ok(manifest)
}

/// An opened dataset directory. Clips are read from disk on demand.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    _t: PhantomData<T>,
}

impl<T: Real> Dataset<T> {
    /// Read and check the manifest; clip files are checked by [`Dataset::verify`].
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        if manifest.version != VERSION {
            return Err(Error::manifest(&path, format!("unsupported dataset version {}", manifest.version)));
        }
        if manifest.clips.is_empty() {
            return Err(tgan_core::Error::EmptyDataset.into());
        }
        if let Some(f) = manifest.clips.iter().find(|f| f.contains(['/', '\\']) || f.starts_with('.')) {
            return Err(Error::manifest(&path, format!("clip file {f:?} escapes the dataset")));
        }
        if let Some(labels) = &manifest.labels {
            if labels.len() != manifest.clips.len() {
                return Err(Error::manifest(&path, format!("{} labels for {} clips", labels.len(), manifest.clips.len())));
            }
            if let Some(&l) = labels.iter().find(|&&l| l >= manifest.num_categories) {
                return Err(Error::manifest(&path, format!("label {l} outside [0, {})", manifest.num_categories)));
            }
        }
        Ok(Self { root: root.to_path_buf(), manifest, _t: PhantomData })
    }

    /// Open and parse every clip file.
    pub fn open_verified(root: &Path) -> Result<Self> {
        let d = Self::open(root)?;
        d.verify()?;
        Ok(d)
    }

    fn path_of(&self, index: usize) -> Option<PathBuf> {
        self.manifest.clips.get(index).map(|f| self.root.join(f))
    }

    pub fn load_clip(&self, index: usize) -> Result<Tensor<T>> {
        let path = self
            .path_of(index)
            .ok_or_else(|| Error::Usage(format!("clip index {index} out of range for {} clips", self.manifest.clips.len())))?;
        let t = load_any(&path)?;
        if t.shape() != self.manifest.clip_shape.as_slice() {
            return Err(Error::manifest(&path, format!("shape {:?}, manifest says {:?}", t.shape(), self.manifest.clip_shape)));
        }
        Ok(t.cast())
    }

    /// Check that every referenced clip exists, parses and has the declared shape.
    pub fn verify(&self) -> Result<()> {
        for i in 0..self.manifest.clips.len() {
            self.load_clip(i)?;
        }
        Ok(())
    }

    pub fn load_all(&self) -> Result<ClipSet<T>> {
        let clips = (0..self.manifest.clips.len()).map(|i| self.load_clip(i)).collect::<Result<Vec<_>>>()?;
        Ok(ClipSet::new(clips, self.manifest.labels.clone(), self.manifest.num_categories)?)
    }
}

impl<T: Real> ClipSource<T> for Dataset<T> {
    fn len(&self) -> usize {
        self.manifest.clips.len()
    }

    fn clip(&self, index: usize) -> tgan_core::Result<Tensor<T>> {
        self.load_clip(index).map_err(|e| match e {
            Error::Core(c) => c,
            other => tgan_core::Error::InvalidParameter(other.to_string()),
        })
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.manifest.labels.as_ref().and_then(|l| l.get(index).copied())
    }

    fn num_categories(&self) -> usize {
        self.manifest.num_categories
    }
}

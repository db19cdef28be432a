//! Run configuration files and file-backed training.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tgan_core::data::{synthesize, ClipSource, DataConfig};
use tgan_core::lipschitz::ClipReport;
use tgan_core::model::{Model, ModelConfig};
use tgan_core::train::{MetricRecord, TrainConfig, TrainObserver, TrainSummary, Trainer};
use tgan_core::{DType, Real};

use crate::checkpoint::save_checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsWriter;
use crate::tnsr::write_atomic;

/// A preset name or a full model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Config(Box<ModelConfig>),
}

fn default_dtype() -> DType {
    DType::F32
}

/// One training run. Exactly one of `data` (synthesized in memory) and
/// `dataset` (a directory written by `make-data`) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    /// Label categories for a preset; 0 keeps the preset unconditional.
    #[serde(default)]
    pub categories: usize,
    /// Seed for parameter initialization; defaults to the training seed.
    #[serde(default)]
    pub model_seed: Option<u64>,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = match &self.model {
            ModelChoice::Preset(name) => ModelConfig::preset(name)?,
            ModelChoice::Config(c) => (**c).clone(),
        };
        Ok(if self.categories > 0 { cfg.with_categories(self.categories) } else { cfg })
    }

    /// Schema checks that need no file IO beyond existence of inputs.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config()?.trace()?;
        match (&self.data, &self.dataset) {
            (Some(d), None) => d.validate()?,
            (None, Some(p)) => {
                if !p.join(crate::dataset::MANIFEST).is_file() {
                    return Err(Error::Usage(format!("dataset {} has no manifest.json", p.display())));
                }
            }
            _ => return Err(Error::Usage("exactly one of `data` and `dataset` must be set".into())),
        }
        Ok(())
    }

    /// The configuration with the model spelled out, as echoed into outputs.
    pub fn resolved(&self) -> Result<Self> {
        Ok(Self { model: ModelChoice::Config(Box::new(self.model_config()?)), categories: 0, ..self.clone() })
    }
}

/// Writes metrics, periodic checkpoints and a diagnostic checkpoint on
/// divergence under one output directory.
pub struct FileObserver {
    pub out: PathBuf,
    metrics: MetricsWriter,
    start: Instant,
    pub clip_worst: f64,
    /// Echo each record to stderr every this many iterations (0 = never).
    pub progress_every: u64,
}

impl FileObserver {
    pub fn create(out: &Path) -> Result<Self> {
        fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
        let metrics = MetricsWriter::create(&out.join("metrics.jsonl"))?;
        Ok(Self { out: out.to_path_buf(), metrics, start: Instant::now(), clip_worst: 0.0, progress_every: 0 })
    }

    pub fn checkpoint_dir(&self, iter: u64) -> PathBuf {
        self.out.join("checkpoints").join(format!("iter-{iter:06}"))
    }
}

impl<T: Real> TrainObserver<T> for FileObserver {
    fn on_record(&mut self, record: &MetricRecord) -> tgan_core::Result<()> {
        if self.progress_every > 0 && record.iter.is_multiple_of(self.progress_every) {
            eprintln!("iter {:>6}  loss_d {:>12.6}  loss_g {:>12.6}", record.iter, record.loss_d, record.loss_g);
        }
        self.metrics.write(record).map_err(core_error)
    }

    fn on_clip(&mut self, _iter: u64, report: &ClipReport) -> tgan_core::Result<()> {
        self.clip_worst = self.clip_worst.max(report.worst());
        Ok(())
    }

    fn on_checkpoint(&mut self, iter: u64, model: &Model<T>) -> tgan_core::Result<()> {
        self.metrics.flush().map_err(core_error)?;
        save_checkpoint(&self.checkpoint_dir(iter), model, Some(iter)).map_err(core_error)
    }

    fn on_divergence(&mut self, iter: u64, model: &Model<T>) -> tgan_core::Result<()> {
        self.metrics.flush().map_err(core_error)?;
        let dir = self.out.join("checkpoints").join(format!("diverged-{iter:06}"));
        save_checkpoint(&dir, model, Some(iter)).map_err(core_error)
    }

    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

fn core_error(e: Error) -> tgan_core::Error {
    match e {
        Error::Core(c) => c,
        other => tgan_core::Error::InvalidParameter(other.to_string()),
    }
}

/// Train as configured, writing `metrics.jsonl`, `config.json` and
/// `checkpoints/{iter-NNNNNN,final}` under `config.out`.
pub fn train_run<T: Real>(config: &RunConfig, progress_every: u64) -> Result<TrainSummary> {
    config.validate()?;
    let resolved = config.resolved()?;
    let model_cfg = config.model_config()?;
    let model = Model::<T>::build(model_cfg, config.model_seed.unwrap_or(config.train.seed))?;
    let data: Box<dyn ClipSource<T>> = match (&config.data, &config.dataset) {
        (Some(d), _) => Box::new(synthesize::<T>(d)?),
        (None, Some(p)) => Box::new(Dataset::<T>::open_verified(p)?.load_all()?),
        (None, None) => unreachable!("validated"),
    };
    let mut observer = FileObserver::create(&config.out)?;
    observer.progress_every = progress_every;
    let echo = config.out.join("config.json");
    let json = serde_json::to_vec_pretty(&resolved).map_err(|e| Error::json(&echo, e))?;
    write_atomic(&echo, &json)?;
    let mut trainer = Trainer::new(config.train.clone(), model)?;
    let summary = trainer.run(data.as_ref(), &mut observer)?;
    save_checkpoint(&config.out.join("checkpoints").join("final"), &trainer.model, Some(summary.iterations))?;
    let path = config.out.join("summary.json");
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::json(&path, e))?;
    write_atomic(&path, &json)?;
    Ok(summary)
}

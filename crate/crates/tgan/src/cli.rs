//! Command line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tgan_core::data::{window, ClipSource, DataConfig};
use tgan_core::eval::{gam_score, motion_stats};
use tgan_core::gradcheck::{end_to_end, op_suite, CheckRow};
use tgan_core::lipschitz::{certify, svc_apply};
use tgan_core::model::{is_discriminator, Model, ModelConfig, VideoClip};
use tgan_core::train::ClipKind;
use tgan_core::{rng, DType, Real, Tensor};

use crate::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use crate::dataset::{write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::frames::export_frames;
use crate::run::{train_run, RunConfig};
use crate::tnsr::{save_tensor, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "tgan", version, about = "Temporal GAN video generation with singular value clipping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a bouncing-shapes dataset directory.
    MakeData(MakeData),
    /// Train from a JSON run configuration.
    Train(Train),
    /// Sample clips from a checkpoint.
    Generate(Generate),
    /// Sample clips with a temporally upsampled latent trajectory.
    Interpolate(Interpolate),
    /// Apply singular value clipping to a checkpoint's critic.
    ClipWeights(ClipWeights),
    /// Compare two checkpoints with the generative adversarial metric.
    EvalGam(EvalGam),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheck),
    /// Print the Lipschitz certificate of a checkpoint's critic.
    Certify(Certify),
}

#[derive(Debug, Args)]
pub struct MakeData {
    /// DataConfig JSON; flags below are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub clips: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub shapes: usize,
    /// Attach shape-kind labels.
    #[arg(long)]
    pub labeled: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_clip)]
    pub clip: Option<ClipKind>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print losses to stderr every N iterations.
    #[arg(long, default_value_t = 0)]
    pub progress: u64,
}

#[derive(Debug, Args)]
pub struct Sampling {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Category for a conditional model.
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip PGM/PPM export.
    #[arg(long)]
    pub no_frames: bool,
}

#[derive(Debug, Args)]
pub struct Generate {
    #[command(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Args)]
pub struct Interpolate {
    #[command(flatten)]
    pub sampling: Sampling,
    #[arg(long, default_value_t = 2)]
    pub factor: usize,
}

#[derive(Debug, Args)]
pub struct ClipWeights {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the certificate here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalGam {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Held-out real clips.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Parameter coordinates for the end-to-end composition.
    #[arg(long, default_value_t = 20)]
    pub coords: usize,
    #[arg(long, default_value = "desk32")]
    pub preset: String,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct Certify {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_clip(s: &str) -> std::result::Result<ClipKind, String> {
    match s {
        "svc" => Ok(ClipKind::Svc),
        "weight" => Ok(ClipKind::Weight),
        "none" => Ok(ClipKind::None),
        other => Err(format!("unknown clip kind `{other}` (svc, weight, none)")),
    }
}

/// `TGAN_THREADS`, if set, must be a positive integer. The kernels are
/// sequential, so any value is an upper bound that is already met.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("TGAN_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("TGAN_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn emit_json<S: Serialize>(value: &S, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(out.unwrap_or(Path::new("-")), e))?;
    match out {
        Some(p) => write_atomic(p, json.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{json}").map_err(|e| Error::io(Path::new("-"), e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    thread_cap()?;
    match cli.command {
        Command::MakeData(a) => make_data(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => sample(&a.sampling, None),
        Command::Interpolate(a) => sample(&a.sampling, Some(a.factor)),
        Command::ClipWeights(a) => clip_weights(a),
        Command::EvalGam(a) => eval_gam(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Certify(a) => certify_cmd(a),
    }
}

fn make_data(a: MakeData) -> Result<()> {
    let config = match &a.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::json(p, e))?
        }
        None => {
            DataConfig { channels: a.channels, num_shapes: a.shapes, labeled: a.labeled, ..DataConfig::new(a.clips, a.resolution, a.seed) }
        }
    };
    let m = write_dataset(&a.out, &config)?;
    eprintln!("wrote {} clips to {}", m.clips.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(c) = a.clip {
        config.train.clip = c;
    }
    if let Some(n) = a.iterations {
        config.train.iterations = n;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(o) = a.out {
        config.out = o;
    }
    let summary = match config.dtype {
        DType::F32 => train_run::<f32>(&config, a.progress)?,
        DType::F64 => train_run::<f64>(&config, a.progress)?,
    };
    emit_json(&summary, None)
}

/// Run `f` on the checkpoint at its stored precision.
macro_rules! with_checkpoint {
    ($dir:expr, |$m:ident| $body:expr) => {
        match read_manifest($dir)?.dtype {
            DType::F32 => {
                let ($m, _) = load_checkpoint::<f32>($dir)?;
                $body
            }
            DType::F64 => {
                let ($m, _) = load_checkpoint::<f64>($dir)?;
                $body
            }
        }
    };
}

/// Latents for `count` clips from `seed`, as `generate` and `interpolate` draw them.
pub fn sample_latents<T: Real>(model: &Model<T>, seed: u64, count: usize) -> Result<Tensor<T>> {
    Ok(model.sample_z0(count, &mut rng::seeded(seed))?)
}

/// Videos `[N, C, T, H, W]` for the sampling flags.
pub fn sample_videos<T: Real>(model: &Model<T>, s: &Sampling, factor: Option<usize>) -> Result<Tensor<T>> {
    if s.count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let z0 = sample_latents(model, s.seed, s.count)?;
    let labels = match (s.label, model.config.is_conditional()) {
        (Some(l), true) => Some(vec![l; s.count]),
        (None, true) => return Err(Error::Usage("conditional checkpoint needs --label".into())),
        (Some(_), false) => return Err(Error::Usage("--label given for an unconditional checkpoint".into())),
        (None, false) => None,
    };
    Ok(match factor {
        Some(f) => model.interpolate(&z0, f, labels.as_deref())?,
        None => model.generate(&z0, labels.as_deref())?,
    })
}

fn write_samples<T: Real>(model: &Model<T>, s: &Sampling, factor: Option<usize>) -> Result<()> {
    let videos = sample_videos(model, s, factor)?;
    std::fs::create_dir_all(&s.out).map_err(|e| Error::io(&s.out, e))?;
    for i in 0..s.count {
        let clip = VideoClip::from_batch(&videos, i, s.label)?;
        save_tensor(&s.out.join(format!("clip-{i:04}.tnsr")), &clip.frames)?;
        if !s.no_frames {
            export_frames(&clip, &s.out.join(format!("clip-{i:04}")))?;
        }
    }
    eprintln!("wrote {} clips of {} frames to {}", s.count, videos.shape()[2], s.out.display());
    Ok(())
}

fn sample(s: &Sampling, factor: Option<usize>) -> Result<()> {
    with_checkpoint!(&s.checkpoint, |m| write_samples(&m, s, factor))
}

fn clip_weights(a: ClipWeights) -> Result<()> {
    with_checkpoint!(&a.input, |m| {
        let mut m = m;
        let iteration = read_manifest(&a.input)?.iteration;
        svc_apply(&mut m.store, is_discriminator)?;
        save_checkpoint(&a.out, &m, iteration)?;
        let mut cert = certify(&m.store, is_discriminator)?;
        cert.iteration = iteration;
        emit_json(&cert, a.report.as_deref())
    })
}

fn certify_cmd(a: Certify) -> Result<()> {
    with_checkpoint!(&a.checkpoint, |m| {
        let mut cert = certify(&m.store, is_discriminator)?;
        cert.iteration = read_manifest(&a.checkpoint)?.iteration;
        emit_json(&cert, a.out.as_deref())
    })
}

/// First `n` clips of a dataset, `frames` frames from offset 0, as `[N, C, T, H, W]`.
pub fn real_videos<T: Real>(data: &dyn ClipSource<T>, n: usize, frames: usize) -> Result<Tensor<T>> {
    if data.len() < n {
        return Err(tgan_core::Error::TooFewSamples { needed: n, got: data.len() }.into());
    }
    let items = (0..n).map(|i| Ok(window(&data.clip(i)?, 0, frames)?)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items.iter().collect::<Vec<_>>())?)
}

fn gam_models<T: Real>(a: &Model<T>, b: &Model<T>, args: &EvalGam) -> Result<()> {
    if a.config.video_shape() != b.config.video_shape() {
        return Err(Error::Usage(format!("models produce different videos: {:?} vs {:?}", a.config.video_shape(), b.config.video_shape())));
    }
    let data = Dataset::<T>::open(&args.dataset)?;
    let real = real_videos(&data, args.samples, a.config.frames)?;
    let report = gam_score(a, b, &real, args.samples, &mut rng::seeded(args.seed))?;
    emit_json(&report, args.out.as_deref())
}

fn eval_gam(args: EvalGam) -> Result<()> {
    let (da, db) = (read_manifest(&args.a)?.dtype, read_manifest(&args.b)?.dtype);
    if da != db {
        return Err(Error::Usage(format!("checkpoints differ in dtype: {} vs {}", da.name(), db.name())));
    }
    match da {
        DType::F32 => gam_models(&load_checkpoint::<f32>(&args.a)?.0, &load_checkpoint::<f32>(&args.b)?.0, &args),
        DType::F64 => gam_models(&load_checkpoint::<f64>(&args.a)?.0, &load_checkpoint::<f64>(&args.b)?.0, &args),
    }
}

/// Every operator row plus the end-to-end row for `preset`.
pub fn grad_table(trials: usize, coords: usize, preset: &str, tol: f64, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = op_suite(trials, seed, tol)?;
    rows.push(end_to_end(&ModelConfig::preset(preset)?, coords, seed, tol)?);
    Ok(rows)
}

fn grad_check(a: GradCheck) -> Result<()> {
    let rows = grad_table(a.trials, a.coords, &a.preset, a.tol, a.seed)?;
    if a.json {
        emit_json(&rows, None)?;
    } else {
        println!("{:<28} {:>6} {:>12}  result", "op", "trials", "worst");
        for r in &rows {
            println!("{:<28} {:>6} {:>12.3e}  {}", r.op, r.trials, r.worst, if r.passed { "pass" } else { "FAIL" });
        }
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Mean frame-difference of generated clips, used to spot static output.
pub fn mean_motion<T: Real>(videos: &Tensor<T>) -> Result<Vec<f64>> {
    (0..videos.shape()[0]).map(|i| Ok(motion_stats(&VideoClip::from_batch(videos, i, None)?.frames)?.mean_abs_frame_diff)).collect()
}

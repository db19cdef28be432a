//! Bouncing-shapes video clips and random window batches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::Tensor;
// Unused when a dependency links std, which brings the inherent methods.
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Dot,
    Square,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Dot, ShapeKind::Square, ShapeKind::Cross];

    /// Whether pixel offset `(dx, dy)` from the center is covered.
    pub fn covers(self, dx: i64, dy: i64, radius: i64) -> bool {
        match self {
            ShapeKind::Dot => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Square => dx.abs() <= radius && dy.abs() <= radius,
            ShapeKind::Cross => {
                let arm = radius / 3;
                (dx.abs() <= radius && dy.abs() <= arm) || (dy.abs() <= radius && dx.abs() <= arm)
            }
        }
    }
}

fn default_clip_len() -> usize {
    20
}
fn default_frames() -> usize {
    16
}
fn default_resolution() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_kinds() -> Vec<ShapeKind> {
    ShapeKind::ALL.to_vec()
}
fn default_radius() -> usize {
    3
}
fn default_speed() -> [f64; 2] {
    [1.0, 3.0]
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_clips: usize,
    #[serde(default = "default_clip_len")]
    pub clip_len: usize,
    /// Window length drawn for training.
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_one")]
    pub channels: usize,
    #[serde(default = "default_one")]
    pub num_shapes: usize,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ShapeKind>,
    /// Half-extent of each shape in pixels.
    #[serde(default = "default_radius")]
    pub radius: usize,
    /// Speed range in pixels per frame.
    #[serde(default = "default_speed")]
    pub speed: [f64; 2],
    /// Attach the shape kind index as a label.
    #[serde(default)]
    pub labeled: bool,
    #[serde(default)]
    pub seed: u64,
}

impl DataConfig {
    pub fn new(num_clips: usize, resolution: usize, seed: u64) -> Self {
        Self {
            num_clips,
            clip_len: default_clip_len(),
            frames: default_frames(),
            resolution,
            channels: 1,
            num_shapes: 1,
            kinds: default_kinds(),
            radius: default_radius(),
            speed: default_speed(),
            labeled: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.num_clips == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.frames == 0 || self.clip_len < self.frames {
            return bad(format!("clip_len {} must be >= frames {} >= 1", self.clip_len, self.frames));
        }
        if self.resolution < 8 {
            return bad(format!("resolution must be >= 8, got {}", self.resolution));
        }
        if !(1..=2).contains(&self.num_shapes) {
            return bad(format!("num_shapes must be 1 or 2, got {}", self.num_shapes));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.kinds.is_empty() {
            return bad("at least one shape kind is required".into());
        }
        let [lo, hi] = self.speed;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("speed range must satisfy 0 < min <= max, got {:?}", self.speed));
        }
        let size = 2 * self.radius + 1;
        if size >= self.resolution {
            return Err(Error::ShapeTooLarge { size, resolution: self.resolution });
        }
        Ok(())
    }

    /// Number of label categories (0 when unlabeled).
    pub fn num_categories(&self) -> usize {
        if self.labeled {
            self.kinds.len()
        } else {
            0
        }
    }
}

/// Continuous centers and velocities of one shape, one entry per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

/// Advance one coordinate, reflecting off `[lo, hi]` as often as needed.
fn step(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (mut p, mut v) = (p + v, v);
    loop {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// One synthesized clip before rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    pub kind: ShapeKind,
    pub kind_index: usize,
    pub shapes: Vec<Trajectory>,
}

/// Motion for clip `index`; deterministic in `(config.seed, index)`.
pub fn plan_clip(config: &DataConfig, index: usize) -> Result<ClipPlan> {
    config.validate()?;
    let mut r = rng::seeded(rng::mix_seed(config.seed, index as u64));
    let kind_index = rng::index(&mut r, config.kinds.len());
    let lo = config.radius as f64;
    let hi = (config.resolution - 1 - config.radius) as f64;
    let mut shapes = Vec::with_capacity(config.num_shapes);
    for _ in 0..config.num_shapes {
        let mut p = [rng::uniform(&mut r, lo, hi), rng::uniform(&mut r, lo, hi)];
        let angle = rng::uniform(&mut r, 0.0, 2.0 * core::f64::consts::PI);
        let speed = rng::uniform(&mut r, config.speed[0], config.speed[1]);
        let mut v = [speed * angle.cos(), speed * angle.sin()];
        let mut traj = Trajectory { positions: Vec::new(), velocities: Vec::new() };
        for _ in 0..config.clip_len {
            traj.positions.push(p);
            traj.velocities.push(v);
            for a in 0..2 {
                (p[a], v[a]) = step(p[a], v[a], lo, hi);
            }
        }
        shapes.push(traj);
    }
    Ok(ClipPlan { kind: config.kinds[kind_index], kind_index, shapes })
}

/// Rasterize a plan into `[clip_len, C, H, W]`: background −1, shapes +1,
/// centers rounded to the nearest pixel, overlaps combined by maximum.
pub fn render_clip<T: Real>(config: &DataConfig, plan: &ClipPlan) -> Result<Tensor<T>> {
    let (res, c) = (config.resolution, config.channels);
    let radius = config.radius as i64;
    let mut t = Tensor::full(&[config.clip_len, c, res, res], -T::one())?;
    let frame = c * res * res;
    for traj in &plan.shapes {
        for (f, p) in traj.positions.iter().enumerate() {
            let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if !plan.kind.covers(dx, dy, radius) {
                        continue;
                    }
                    let (x, y) = ((cx + dx) as usize, (cy + dy) as usize);
                    for ch in 0..c {
                        t.data_mut()[f * frame + (ch * res + y) * res + x] = T::one();
                    }
                }
            }
        }
    }
    Ok(t)
}

/// Clip `index` and its label (when the config is labeled).
pub fn synthesize_clip<T: Real>(config: &DataConfig, index: usize) -> Result<(Tensor<T>, Option<usize>)> {
    let plan = plan_clip(config, index)?;
    let label = config.labeled.then_some(plan.kind_index);
    Ok((render_clip(config, &plan)?, label))
}

/// Random access to `[clip_len, C, H, W]` clips.
pub trait ClipSource<T: Real> {
    fn len(&self) -> usize;
    fn clip(&self, index: usize) -> Result<Tensor<T>>;
    fn label(&self, index: usize) -> Option<usize>;
    fn num_categories(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet<T> {
    pub clips: Vec<Tensor<T>>,
    pub labels: Option<Vec<usize>>,
    pub num_categories: usize,
}

impl<T: Real> ClipSet<T> {
    pub fn new(clips: Vec<Tensor<T>>, labels: Option<Vec<usize>>, num_categories: usize) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let shape = clips[0].shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch { op: "clip_set", lhs: shape, rhs: vec![0; 4] });
        }
        if let Some(c) = clips.iter().find(|c| c.shape() != shape.as_slice()) {
            return Err(Error::ShapeMismatch { op: "clip_set", lhs: shape, rhs: c.shape().to_vec() });
        }
        if let Some(l) = &labels {
            if l.len() != clips.len() {
                return Err(Error::ShapeMismatch { op: "clip_set", lhs: vec![clips.len()], rhs: vec![l.len()] });
            }
            if let Some(&bad) = l.iter().find(|&&x| x >= num_categories) {
                return Err(Error::LabelOutOfRange { label: bad, categories: num_categories });
            }
        }
        Ok(Self { clips, labels, num_categories })
    }
}

impl<T: Real> ClipSource<T> for ClipSet<T> {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn clip(&self, index: usize) -> Result<Tensor<T>> {
        self.clips.get(index).cloned().ok_or(Error::InvalidParameter(format!("clip index {index} out of range")))
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.get(index).copied())
    }

    fn num_categories(&self) -> usize {
        self.num_categories
    }
}

/// Every clip of a configuration, in memory.
pub fn synthesize<T: Real>(config: &DataConfig) -> Result<ClipSet<T>> {
    config.validate()?;
    let mut clips = Vec::with_capacity(config.num_clips);
    let mut labels = Vec::new();
    for i in 0..config.num_clips {
        let (clip, label) = synthesize_clip(config, i)?;
        clips.push(clip);
        labels.extend(label);
    }
    let labels = config.labeled.then_some(labels);
    ClipSet::new(clips, labels, config.num_categories())
}

/// A training batch in critic layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B, C, T, H, W]`.
    pub videos: Tensor<T>,
    pub labels: Option<Vec<usize>>,
    /// `(clip index, window offset)` per item.
    pub picks: Vec<(usize, usize)>,
}

/// `[T, C, H, W]` window of a clip starting at `offset`, as `[C, T, H, W]`.
pub fn window<T: Real>(clip: &Tensor<T>, offset: usize, frames: usize) -> Result<Tensor<T>> {
    clip.narrow(0, offset, frames)?.permute(&[1, 0, 2, 3])
}

/// Random clips with random contiguous windows of `frames` frames.
pub fn sample_batch<T: Real>(source: &dyn ClipSource<T>, frames: usize, batch_size: usize, rng: &mut SeededRng) -> Result<Batch<T>> {
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut items = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    let mut picks = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let i = rng::index(rng, source.len());
        let clip = source.clip(i)?;
        let len = clip.shape()[0];
        if frames == 0 || frames > len {
            return Err(Error::InvalidParameter(format!("window of {frames} frames from clips of {len}")));
        }
        let offset = rng::index(rng, len - frames + 1);
        items.push(window(&clip, offset, frames)?);
        labels.extend(source.label(i));
        picks.push((i, offset));
    }
    let videos = Tensor::stack(&items.iter().collect::<Vec<_>>())?;
    let labels = (source.num_categories() > 0 && labels.len() == batch_size).then_some(labels);
    Ok(Batch { videos, labels, picks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_preserves_speed() {
        let (p, v) = step(9.5, 2.0, 3.0, 10.0);
        assert_eq!((p, v), (8.5, -2.0));
        let (p, v) = step(4.0, -30.0, 3.0, 10.0);
        assert!((3.0..=10.0).contains(&p));
        assert_eq!(v.abs(), 30.0);
    }

    #[test]
    fn config_errors() {
        let mut c = DataConfig::new(4, 8, 0);
        c.radius = 4;
        assert!(matches!(c.validate(), Err(Error::ShapeTooLarge { .. })));
        c.radius = 1;
        c.clip_len = 10;
        assert!(c.validate().is_err());
        assert!(matches!(DataConfig::new(0, 16, 0).validate(), Err(Error::EmptyDataset)));
    }

    #[test]
    fn clips_are_deterministic_and_in_range() {
        let c = DataConfig { num_shapes: 2, ..DataConfig::new(3, 16, 11) };
        let a = synthesize::<f32>(&c).unwrap();
        let b = synthesize::<f32>(&c).unwrap();
        assert_eq!(a, b);
        for clip in &a.clips {
            assert!(clip.data().iter().all(|&v| v == -1.0 || v == 1.0));
            assert!(clip.data().contains(&1.0));
        }
    }

    #[test]
    fn full_length_window_starts_at_zero() {
        let c = DataConfig { clip_len: 16, ..DataConfig::new(5, 16, 2) };
        let set = synthesize::<f32>(&c).unwrap();
        let mut r = rng::seeded(1);
        let b = sample_batch(&set, 16, 4, &mut r).unwrap();
        assert!(b.picks.iter().all(|&(_, o)| o == 0));
        assert_eq!(b.videos.shape(), &[4, 1, 16, 16, 16]);
    }
}

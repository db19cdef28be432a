//! Temporal generator, image generator, 3D critic, conditional variants and
//! frame interpolation.

mod config;
mod session;
mod store;

use alloc::vec;
use alloc::vec::Vec;

pub use config::{Architecture, ModelConfig, ModelTrace};
pub use session::Session;
pub use store::{build, expected_tensors, is_discriminator, is_generator, is_trainable, registry, LayerEntry, ParamStore, BN_FIELDS};

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::{Init, Tensor};

/// A `[T, C, H, W]` clip in `[-1, 1]` with an optional category.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip<T> {
    pub frames: Tensor<T>,
    pub label: Option<usize>,
}

impl<T: Real> VideoClip<T> {
    pub fn new(frames: Tensor<T>, label: Option<usize>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::ShapeMismatch { op: "video_clip", lhs: frames.shape().to_vec(), rhs: vec![0; 4] });
        }
        Ok(Self { frames, label })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Item `i` of a `[N, C, T, H, W]` batch.
    pub fn from_batch(batch: &Tensor<T>, i: usize, label: Option<usize>) -> Result<Self> {
        if batch.rank() != 5 {
            return Err(Error::ShapeMismatch { op: "video_clip", lhs: batch.shape().to_vec(), rhs: vec![0; 5] });
        }
        Self::new(batch.index_leading(i)?.permute(&[1, 0, 2, 3])?, label)
    }

    /// `[1, C, T, H, W]` layout expected by the critic.
    pub fn to_batch(&self) -> Result<Tensor<T>> {
        let s = self.frames.shape();
        self.frames.permute(&[1, 0, 2, 3])?.into_reshape(&[1, s[1], s[0], s[2], s[3]])
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Build fresh parameters; rejects configurations whose traces do not
    /// close.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let store = build(&config, seed)?;
        Ok(Self { config, store })
    }

    /// Pair an existing store with its configuration after checking that
    /// every layer resolves.
    pub fn from_parts(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        if registry(&config)? != store.layers() {
            return Err(Error::InvalidConfig("parameter store does not match the configuration".into()));
        }
        store.validate()?;
        Ok(Self { config, store })
    }

    pub fn session(&self, mode: Mode) -> Session<'_, T> {
        Session::new(self, mode)
    }

    /// `z0 ~ U(-1, 1)^{K0}` for `n` samples.
    pub fn sample_z0(&self, n: usize, rng: &mut SeededRng) -> Result<Tensor<T>> {
        Tensor::sample(&[n, self.config.k0], Init::Uniform { low: -1.0, high: 1.0 }, rng)
    }

    /// One-hot rows `[N, V]`.
    pub fn one_hot(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let v = self.config.num_categories;
        if v == 0 {
            return Err(Error::Unconditional);
        }
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut t = Tensor::zeros(&[labels.len(), v])?;
        for (i, &l) in labels.iter().enumerate() {
            if l >= v {
                return Err(Error::LabelOutOfRange { label: l, categories: v });
            }
            t.data_mut()[i * v + l] = T::one();
        }
        Ok(t)
    }

    /// One-hot labels broadcast to `[N, V, T, H, W]`.
    pub fn label_voxel(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let hot = self.one_hot(labels)?;
        let (v, vol) = (cfg.num_categories, cfg.frames * cfg.resolution * cfg.resolution);
        let mut data = Vec::with_capacity(labels.len() * v * vol);
        for &x in hot.data() {
            data.extend(std::iter::repeat_n(x, vol));
        }
        Tensor::from_vec(&[labels.len(), v, cfg.frames, cfg.resolution, cfg.resolution], data)
    }

    fn label_input(&self, s: &mut Session<'_, T>, labels: Option<&[usize]>) -> Result<Option<crate::Var>> {
        labels.map(|l| self.one_hot(l).map(|t| s.input(t))).transpose()
    }

    /// Latent trajectories `[N, T, K1]` (inference mode).
    pub fn temporal_forward(&self, z0: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let mut s = self.session(Mode::Infer);
        let z = s.input_ref(z0);
        let l = self.label_input(&mut s, labels)?;
        let y = s.temporal(z, l)?;
        Ok(s.value(y)?.clone())
    }

    /// Frames `[M, C, H, W]` from `z0: [M, K0]`, `z1: [M, K1]`.
    pub fn image_forward(&self, z0: &Tensor<T>, z1: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let mut s = self.session(Mode::Infer);
        let (a, b) = (s.input_ref(z0), s.input_ref(z1));
        let l = self.label_input(&mut s, labels)?;
        let y = s.image(a, b, l)?;
        Ok(s.value(y)?.clone())
    }

    /// Videos `[N, C, T, H, W]` (inference mode).
    pub fn generate(&self, z0: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let mut s = self.session(Mode::Infer);
        let z = s.input_ref(z0);
        let l = self.label_input(&mut s, labels)?;
        let y = s.generate(z, l)?;
        Ok(s.value(y)?.clone())
    }

    /// One clip from a single `z0` of length K0.
    pub fn generate_video(&self, z0: &Tensor<T>) -> Result<VideoClip<T>> {
        let z = z0.reshape(&[1, self.config.k0])?;
        VideoClip::from_batch(&self.generate(&z, None)?, 0, None)
    }

    /// Conditional clip for label `l`.
    pub fn conditional_forward(&self, z0: &Tensor<T>, label: usize) -> Result<VideoClip<T>> {
        let z = z0.reshape(&[1, self.config.k0])?;
        VideoClip::from_batch(&self.generate(&z, Some(&[label]))?, 0, Some(label))
    }

    /// Critic scores for `[N, C, T, H, W]` videos (inference mode).
    pub fn discriminate(&self, x: &Tensor<T>, labels: Option<&[usize]>) -> Result<Vec<T>> {
        let mut s = self.session(Mode::Infer);
        let v = s.input_ref(x);
        let y = s.discriminate(v, labels)?;
        Ok(s.value(y)?.data().to_vec())
    }

    /// Critic score of one clip.
    pub fn discriminate_clip(&self, clip: &VideoClip<T>) -> Result<T> {
        let labels = clip.label.map(|l| vec![l]);
        Ok(self.discriminate(&clip.to_batch()?, labels.as_deref())?[0])
    }

    /// Critic score of one clip under label `l`.
    pub fn conditional_discriminate(&self, clip: &VideoClip<T>, label: usize) -> Result<T> {
        Ok(self.discriminate(&clip.to_batch()?, Some(&[label]))?[0])
    }

    /// Videos with `factor·(T−1)+1` frames: the latent trajectory is
    /// linearly upsampled with aligned endpoints, so frame `factor·t` uses
    /// the original `z1[t]` exactly.
    pub fn interpolate(&self, z0: &Tensor<T>, factor: usize, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        if factor < 1 {
            return Err(Error::InvalidParameter("interpolation factor must be >= 1".into()));
        }
        let z1 = self.temporal_forward(z0, labels)?;
        let up = upsample_latents(&z1, factor)?;
        let mut s = self.session(Mode::Infer);
        let (a, b) = (s.input_ref(z0), s.input(up));
        let l = self.label_input(&mut s, labels)?;
        let y = s.render(a, b, l)?;
        Ok(s.value(y)?.clone())
    }
}

/// Align-corners linear upsampling of `[N, T, K]` along the time axis.
pub fn upsample_latents<T: Real>(z1: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(Error::InvalidParameter("interpolation factor must be >= 1".into()));
    }
    let s = z1.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch { op: "upsample", lhs: s.to_vec(), rhs: vec![0, 0, 0] });
    }
    let (n, t, k) = (s[0], s[1], s[2]);
    let len = factor * (t - 1) + 1;
    let src = z1.data();
    let mut out = Vec::with_capacity(n * len * k);
    for b in 0..n {
        let row = |i: usize| &src[(b * t + i) * k..(b * t + i + 1) * k];
        for o in 0..len {
            let (i, j) = (o / factor, o % factor);
            if j == 0 {
                out.extend_from_slice(row(i));
            } else {
                let a = T::from_usize(j).unwrap() / T::from_usize(factor).unwrap();
                out.extend(row(i).iter().zip(row(i + 1)).map(|(&x, &y)| (T::one() - a) * x + a * y));
            }
        }
    }
    Tensor::from_vec(&[n, len, k], out)
}

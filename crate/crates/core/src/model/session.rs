use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, Mode};
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::config::Architecture;
use super::store::{is_discriminator, LayerEntry};
use super::Model;

/// One forward pass over a model: a fresh tape with parameters bound by
/// reference. Parameters selected by the trainable filter become
/// differentiable leaves; all others are constants.
pub struct Session<'a, T: Real> {
    pub graph: Graph<'a, T>,
    model: &'a Model<T>,
    mode: Mode,
    trainable: fn(&str) -> bool,
    bound: BTreeMap<String, Var>,
    bn_updates: Vec<(String, BatchStats<T>)>,
    noise: Option<(f64, SeededRng)>,
    disc_gamma: bool,
}

fn nothing(_: &str) -> bool {
    false
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(model: &'a Model<T>, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            model,
            mode,
            trainable: nothing,
            bound: BTreeMap::new(),
            bn_updates: Vec::new(),
            noise: None,
            disc_gamma: true,
        }
    }

    /// Bind parameters whose name passes `filter` as differentiable leaves.
    pub fn trainable(mut self, filter: fn(&str) -> bool) -> Self {
        self.trainable = filter;
        self
    }

    /// Add `N(0, sigma²)` noise to the input of every parametric
    /// discriminator layer.
    pub fn disc_noise(mut self, sigma: f64, seed: u64) -> Self {
        if sigma > 0.0 {
            self.noise = Some((sigma, rng::seeded(seed)));
        }
        self
    }

    /// Use a fixed unit scale in discriminator batch norms.
    pub fn without_disc_gamma(mut self) -> Self {
        self.disc_gamma = false;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn model(&self) -> &'a Model<T> {
        self.model
    }

    /// Tensor bound once per session; repeated uses share a node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.model.store.get(name)?;
        let v = if (self.trainable)(name) && super::store::is_trainable(name) { self.graph.param(t) } else { self.graph.constant_ref(t) };
        self.bound.insert(name.into(), v);
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    pub fn input_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.graph.constant_ref(t)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        self.graph.value(v)
    }

    /// Batch statistics gathered by train-mode batch norms, in call order.
    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchStats<T>)> {
        core::mem::take(&mut self.bn_updates)
    }

    /// Gradients of `root` for every bound trainable parameter; parameters
    /// the root does not depend on get zeros.
    pub fn gradients(&self, root: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut grads = self.graph.backward(root)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if !self.graph.requires_grad(v)? {
                continue;
            }
            let g = match grads.take(v) {
                Some(g) => g,
                None => Tensor::zeros(self.graph.shape(v)?)?,
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    /// Apply one registered layer.
    pub fn apply(&mut self, entry: &LayerEntry, x: Var) -> Result<Var> {
        let name = &entry.name;
        let disc = is_discriminator(name);
        let mut x = x;
        if entry.kind().has_weight() && disc {
            if let Some((sigma, rng)) = self.noise.as_mut() {
                let shape = self.graph.shape(x)?.to_vec();
                let n = shape.iter().product::<usize>();
                let data = (0..n).map(|_| T::from_f64_lossy(rng::normal(rng, 0.0, *sigma))).collect();
                let noise = self.graph.constant(Tensor::from_vec(&shape, data)?);
                x = self.graph.add(x, noise)?;
            }
        }
        match entry.kind() {
            LayerKind::Linear => {
                let shape = self.graph.shape(x)?.to_vec();
                let flat = if shape.len() == 2 { x } else { self.graph.reshape(x, &[shape[0], shape[1..].iter().product()])? };
                let w = self.param(&format!("{name}.w"))?;
                let b = if entry.bias { Some(self.param(&format!("{name}.b"))?) } else { None };
                self.graph.linear(flat, w, b)
            }
            k if k.spatial_dims().is_some() => {
                let geom = entry.spec.geometry()?.expect("convolutional kind");
                let w = self.param(&format!("{name}.w"))?;
                let y = if k.is_transposed() { self.graph.deconv(x, w, &geom)? } else { self.graph.conv(x, w, &geom)? };
                if entry.bias {
                    let b = self.param(&format!("{name}.b"))?;
                    self.graph.channel_bias(y, b)
                } else {
                    Ok(y)
                }
            }
            LayerKind::Batchnorm => {
                let gamma = if disc && !self.disc_gamma { None } else { Some(self.param(&format!("{name}.gamma"))?) };
                let beta = self.param(&format!("{name}.beta"))?;
                match self.mode {
                    Mode::Train => {
                        let (y, stats) = self.graph.batch_norm_train(x, gamma, beta, entry.spec.eps)?;
                        self.bn_updates.push((name.clone(), stats));
                        Ok(y)
                    }
                    Mode::Infer => {
                        let store = &self.model.store;
                        let mean = store.get(&format!("{name}.running_mean"))?.data();
                        let std = store.get(&format!("{name}.running_std"))?.data();
                        self.graph.batch_norm_infer(x, gamma, beta, mean, std, entry.spec.eps)
                    }
                }
            }
            _ => {
                let act = entry.spec.activation().expect("activation kind");
                self.graph.activation(x, act)
            }
        }
    }

    /// Apply the numbered stack `{prefix}.0 ..` in order.
    pub fn run_stack(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let stack = self.model.store.stack(prefix);
        if stack.is_empty() {
            return Err(Error::MissingParameter(format!("{prefix}.0")));
        }
        let mut x = x;
        for entry in stack {
            x = self.apply(entry, x)?;
        }
        Ok(x)
    }

    fn layer(&self, name: &str) -> Result<&'a LayerEntry> {
        self.model.store.layer(name)
    }

    fn check(&self, v: Var, op: &'static str, expect: &[usize]) -> Result<()> {
        let s = self.graph.shape(v)?;
        if s.len() != expect.len() + 1 || &s[1..] != expect {
            let mut rhs = vec![0];
            rhs.extend_from_slice(expect);
            return Err(Error::ShapeMismatch { op, lhs: s.to_vec(), rhs });
        }
        Ok(())
    }

    /// `[N, F]` repeated `times` along a new frame axis, flattened to
    /// `[N·times, F]`.
    fn repeat_frames(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.graph.shape(x)?.to_vec();
        let x3 = self.graph.reshape(x, &[s[0], 1, s[1]])?;
        let parts = vec![x3; times];
        let rep = self.graph.concat(&parts, 1)?;
        self.graph.reshape(rep, &[s[0] * times, s[1]])
    }

    /// Head after its linear map: reshape, batch norm, ReLU.
    fn head_tail(&mut self, head: &str, x: Var) -> Result<Var> {
        let bn = self.layer(&format!("g1.{head}.1"))?;
        let n = self.graph.shape(x)?[0];
        let mut shape = vec![n];
        shape.extend_from_slice(&bn.input);
        let x = self.graph.reshape(x, &shape)?;
        let x = self.apply(bn, x)?;
        let relu = self.layer(&format!("g1.{head}.2"))?;
        self.apply(relu, x)
    }

    fn head_linear(&mut self, head: &str, x: Var) -> Result<Var> {
        let lin = self.layer(&format!("g1.{head}.0"))?;
        self.apply(lin, x)
    }

    fn need_labels(&self, labels: Option<Var>) -> Result<()> {
        match (self.model.config.is_conditional(), labels.is_some()) {
            (true, false) => Err(Error::LabelsRequired),
            (false, true) => Err(Error::Unconditional),
            _ => Ok(()),
        }
    }

    /// Temporal generator: `z0: [N, K0]` (and one-hot `[N, V]`) to
    /// `[N, T, K1]`.
    pub fn temporal(&mut self, z0: Var, labels: Option<Var>) -> Result<Var> {
        let cfg = &self.model.config;
        if cfg.architecture != Architecture::Tgan {
            return Err(Error::Unsupported("the 3D generator has no temporal stage".into()));
        }
        self.need_labels(labels)?;
        self.check(z0, "temporal", &[cfg.k0])?;
        let n = self.graph.shape(z0)?[0];
        let input = match labels {
            Some(l) => {
                self.check(l, "temporal", &[cfg.num_categories])?;
                self.graph.concat(&[z0, l], 1)?
            }
            None => z0,
        };
        let x = self.graph.reshape(input, &[n, cfg.k0 + cfg.num_categories, 1])?;
        let y = self.run_stack("g0", x)?;
        self.graph.permute(y, &[0, 2, 1])
    }

    /// Image generator applied to each of `L` latent frames:
    /// `z0: [N, K0]`, `z1: [N, L, K1]`, labels `[N, V]` to `[N, C, L, H, W]`.
    pub fn render(&mut self, z0: Var, z1: Var, labels: Option<Var>) -> Result<Var> {
        let cfg = &self.model.config;
        self.need_labels(labels)?;
        let s = self.graph.shape(z1)?.to_vec();
        if s.len() != 3 || s[2] != cfg.k1 {
            return Err(Error::ShapeMismatch { op: "render", lhs: s, rhs: vec![0, 0, cfg.k1] });
        }
        let (n, len) = (s[0], s[1]);
        self.check(z0, "render", &[cfg.k0])?;
        let flat = self.graph.reshape(z1, &[n * len, cfg.k1])?;
        let mut maps = Vec::new();
        for head in cfg.image_heads() {
            let h = match head {
                "z1" => self.head_linear(head, flat)?,
                "z0" => {
                    let h = self.head_linear(head, z0)?;
                    self.repeat_frames(h, len)?
                }
                _ => {
                    let l = labels.expect("checked above");
                    let h = self.head_linear(head, l)?;
                    self.repeat_frames(h, len)?
                }
            };
            maps.push(self.head_tail(head, h)?);
        }
        let x = self.graph.concat(&maps, 1)?;
        let frames = self.run_stack("g1", x)?;
        let (c, hgt, wid) = (cfg.channels, cfg.resolution, cfg.resolution);
        let frames = self.graph.reshape(frames, &[n, len, c, hgt, wid])?;
        self.graph.permute(frames, &[0, 2, 1, 3, 4])
    }

    /// Single-frame image generator: `z0: [M, K0]`, `z1: [M, K1]` to
    /// `[M, C, H, W]`.
    pub fn image(&mut self, z0: Var, z1: Var, labels: Option<Var>) -> Result<Var> {
        let cfg = &self.model.config;
        let m = self.graph.shape(z1)?[0];
        let z1 = self.graph.reshape(z1, &[m, 1, cfg.k1])?;
        let v = self.render(z0, z1, labels)?;
        self.graph.reshape(v, &[m, cfg.channels, cfg.resolution, cfg.resolution])
    }

    /// Full generator: `z0: [N, K0]` to videos `[N, C, T, H, W]`.
    pub fn generate(&mut self, z0: Var, labels: Option<Var>) -> Result<Var> {
        match self.model.config.architecture {
            Architecture::Tgan => {
                let z1 = self.temporal(z0, labels)?;
                self.render(z0, z1, labels)
            }
            Architecture::Video3d => {
                self.need_labels(labels)?;
                self.check(z0, "generate", &[self.model.config.k0])?;
                let h = self.head_linear("seed", z0)?;
                let x = self.head_tail("seed", h)?;
                self.run_stack("g1", x)
            }
        }
    }

    /// Critic scores `[N, 1]` for videos `[N, C, T, H, W]`; conditional
    /// models take the labels as a broadcast one-hot voxel.
    pub fn discriminate(&mut self, x: Var, labels: Option<&[usize]>) -> Result<Var> {
        let cfg = &self.model.config;
        self.check(x, "discriminate", &cfg.video_shape())?;
        let n = self.graph.shape(x)?[0];
        let input = match (cfg.is_conditional(), labels) {
            (true, Some(l)) => {
                if l.len() != n {
                    return Err(Error::ShapeMismatch { op: "discriminate", lhs: vec![n], rhs: vec![l.len()] });
                }
                let voxel = self.graph.constant(self.model.label_voxel(l)?);
                self.graph.concat(&[x, voxel], 1)?
            }
            (true, None) => return Err(Error::LabelsRequired),
            (false, Some(_)) => return Err(Error::Unconditional),
            (false, None) => x,
        };
        self.run_stack("d", input)
    }
}

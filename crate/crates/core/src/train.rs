//! Adversarial losses, RMSProp, weight clipping and the alternating
//! critic/generator loop with periodic singular value clipping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{sample_batch, ClipSource};
use crate::error::{Error, Result};
use crate::lipschitz::{svc_apply, ClipReport};
use crate::model::{is_discriminator, is_generator, is_trainable, Model};
use crate::nn::Mode;
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::Tensor;
// Unused when a dependency links std, which brings the inherent methods.
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Wgan,
    Gan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    #[default]
    Svc,
    Weight,
    None,
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `(L_D, L_G) = (−(mean real − mean fake), −mean fake)`.
pub fn wgan_losses(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    let (r, f) = (mean(real)?, mean(fake)?);
    if !r.is_finite() || !f.is_finite() {
        return Err(Error::NonFinite("critic scores".into()));
    }
    Ok((-(r - f), -f))
}

/// `(L_D, L_G) = (−mean ln p_real − mean ln(1 − p_fake), −mean ln p_fake)`
/// with probabilities clamped away from 0 and 1.
pub fn gan_losses(real_probs: &[f64], fake_probs: &[f64]) -> Result<(f64, f64)> {
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let lr: Vec<f64> = real_probs.iter().map(|&p| clamp(p).ln()).collect();
    let lf1: Vec<f64> = fake_probs.iter().map(|&p| (1.0 - clamp(p)).ln()).collect();
    let lf: Vec<f64> = fake_probs.iter().map(|&p| clamp(p).ln()).collect();
    Ok((-mean(&lr)? - mean(&lf1)?, -mean(&lf)?))
}

/// Critic loss on the tape for raw critic outputs `[N, 1]`.
pub fn critic_loss<T: Real>(g: &mut Graph<'_, T>, kind: LossKind, real: Var, fake: Var) -> Result<Var> {
    match kind {
        LossKind::Wgan => {
            let (r, f) = (g.mean(real)?, g.mean(fake)?);
            g.sub(f, r)
        }
        LossKind::Gan => {
            let (lo, hi) = (T::from_f64_lossy(PROB_EPS), T::from_f64_lossy(1.0 - PROB_EPS));
            let pr = g.sigmoid(real)?;
            let lr = g.ln_clamped(pr, lo, hi)?;
            // 1 − σ(s) = σ(−s)
            let neg = g.scale(fake, -T::one())?;
            let pf = g.sigmoid(neg)?;
            let lf = g.ln_clamped(pf, lo, hi)?;
            let (a, b) = (g.mean(lr)?, g.mean(lf)?);
            let s = g.add(a, b)?;
            g.scale(s, -T::one())
        }
    }
}

/// Generator loss on the tape for raw critic outputs on fakes.
pub fn generator_loss<T: Real>(g: &mut Graph<'_, T>, kind: LossKind, fake: Var) -> Result<Var> {
    match kind {
        LossKind::Wgan => {
            let m = g.mean(fake)?;
            g.scale(m, -T::one())
        }
        LossKind::Gan => {
            let (lo, hi) = (T::from_f64_lossy(PROB_EPS), T::from_f64_lossy(1.0 - PROB_EPS));
            let p = g.sigmoid(fake)?;
            let l = g.ln_clamped(p, lo, hi)?;
            let m = g.mean(l)?;
            g.scale(m, -T::one())
        }
    }
}

/// Per-parameter running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub sq: BTreeMap<String, Tensor<T>>,
    pub steps: u64,
}

impl<T> Default for OptState<T> {
    fn default() -> Self {
        Self { sq: BTreeMap::new(), steps: 0 }
    }
}

/// RMSProp hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self { lr, rho: 0.9, eps: 1e-8 }
    }

    /// `v ← ρv + (1−ρ)g²; θ ← θ − lr·g/(√v + ε)` for every gradient.
    pub fn step<'s, T: Real>(
        &self,
        params: impl Iterator<Item = (&'s str, &'s mut Tensor<T>)>,
        grads: &BTreeMap<String, Tensor<T>>,
        state: &mut OptState<T>,
    ) -> Result<()> {
        let (rho, rest) = (T::from_f64_lossy(self.rho), T::from_f64_lossy(1.0 - self.rho));
        let (lr, eps) = (T::from_f64_lossy(self.lr), T::from_f64_lossy(self.eps));
        for (name, p) in params {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch { op: "rmsprop", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
            let v = match state.sq.get_mut(name) {
                Some(v) => v,
                None => state.sq.entry(name.into()).or_insert(Tensor::zeros(p.shape())?),
            };
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = rho * *vi + rest * gi * gi;
                *w -= lr * gi / (vi.sqrt() + eps);
            }
        }
        state.steps += 1;
        Ok(())
    }
}

/// Clamp every selected trainable tensor elementwise into `[−c, c]`.
pub fn weight_clip<T: Real>(model: &mut Model<T>, c: f64, filter: fn(&str) -> bool) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("clip bound must be positive, got {c}")));
    }
    let (lo, hi) = (T::from_f64_lossy(-c), T::from_f64_lossy(c));
    for (name, t) in model.store.iter_mut() {
        if filter(name) && is_trainable(name) {
            for v in t.data_mut() {
                *v = v.max(lo).min(hi);
            }
        }
    }
    Ok(())
}

fn d_lr() -> f64 {
    5e-5
}
fn d_one() -> usize {
    1
}
fn d_clip_every() -> usize {
    5
}
fn d_bound() -> f64 {
    0.01
}
fn d_batch() -> usize {
    8
}
fn d_noise() -> f64 {
    0.2
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    /// Critic updates per generator update.
    #[serde(default = "d_one")]
    pub n_critic: usize,
    /// Singular value clipping interval.
    #[serde(default = "d_clip_every")]
    pub n_clip: usize,
    /// Weight-clipping box half-width.
    #[serde(default = "d_bound")]
    pub clip_bound: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub clip: ClipKind,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    /// Critic input noise in `gan` mode.
    #[serde(default = "d_noise")]
    pub noise_sigma: f64,
    /// Checkpoint interval in iterations; 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn new(iterations: u64) -> Self {
        Self {
            learning_rate: d_lr(),
            n_critic: 1,
            n_clip: d_clip_every(),
            clip_bound: d_bound(),
            loss: LossKind::Wgan,
            clip: ClipKind::Svc,
            batch_size: d_batch(),
            iterations,
            seed: 0,
            noise_sigma: d_noise(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.n_critic == 0 || self.n_clip == 0 {
            return bad("n_critic and n_clip must be >= 1".into());
        }
        if !(self.clip_bound > 0.0) {
            return bad(format!("clip_bound must be positive, got {}", self.clip_bound));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2 for batch normalization".into());
        }
        Ok(())
    }

    /// Whether singular value clipping runs after iteration `t` (1-based):
    /// iterations 1, 1 + n_clip, 1 + 2·n_clip, ...
    pub fn clips_at(&self, t: u64) -> bool {
        self.clip == ClipKind::Svc && (t - 1).is_multiple_of(self.n_clip as u64)
    }
}

/// JSON has no NaN or infinity; non-finite losses are written as the
/// strings `"NaN"`, `"inf"` and `"-inf"`.
mod loss_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> core::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw<'a> {
        Num(f64),
        Text(&'a str),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text("NaN") => Ok(f64::NAN),
            Raw::Text("inf") => Ok(f64::INFINITY),
            Raw::Text("-inf") => Ok(f64::NEG_INFINITY),
            Raw::Text(other) => Err(serde::de::Error::custom(alloc::format!("invalid loss value {other:?}"))),
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: u64,
    #[serde(with = "loss_value")]
    pub loss_d: f64,
    #[serde(with = "loss_value")]
    pub loss_g: f64,
    pub wall_ms: u64,
    /// Post-clip constant per critic layer, on clipping iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sigma: Option<BTreeMap<String, f64>>,
}

/// Hooks called by [`Trainer::run`].
pub trait TrainObserver<T: Real> {
    fn on_record(&mut self, _record: &MetricRecord) -> Result<()> {
        Ok(())
    }

    fn on_clip(&mut self, _iter: u64, _report: &ClipReport) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` iterations and at the end.
    fn on_checkpoint(&mut self, _iter: u64, _model: &Model<T>) -> Result<()> {
        Ok(())
    }

    /// Called with the model state that produced a non-finite loss.
    fn on_divergence(&mut self, _iter: u64, _model: &Model<T>) -> Result<()> {
        Ok(())
    }

    /// Milliseconds since an arbitrary origin, for the `wall_ms` field.
    fn now_ms(&self) -> u64 {
        0
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl<T: Real> TrainObserver<T> for Silent {}

/// Summary returned by [`Trainer::run`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub critic_updates: u64,
    pub generator_updates: u64,
    pub clip_events: Vec<u64>,
}

/// Alternating critic/generator optimization state.
pub struct Trainer<T: Real> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub opt_d: OptState<T>,
    pub opt_g: OptState<T>,
    rng: SeededRng,
    pub summary: TrainSummary,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, model: Model<T>) -> Result<Self> {
        config.validate()?;
        let rng = rng::seeded(rng::mix_seed(config.seed, 0x7a41));
        Ok(Self { config, model, opt_d: OptState::default(), opt_g: OptState::default(), rng, summary: TrainSummary::default() })
    }

    fn optimizer(&self) -> RmsProp {
        RmsProp::new(self.config.learning_rate)
    }

    fn gan(&self) -> bool {
        self.config.loss == LossKind::Gan
    }

    fn fake_labels(&mut self, n: usize) -> Option<Vec<usize>> {
        let v = self.model.config.num_categories;
        (v > 0).then(|| (0..n).map(|_| rng::index(&mut self.rng, v)).collect())
    }

    fn critic_step(&mut self, data: &dyn ClipSource<T>) -> Result<f64> {
        let cfg = &self.model.config;
        if data.num_categories() != cfg.num_categories {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} categories, model expects {}",
                data.num_categories(),
                cfg.num_categories
            )));
        }
        let b = self.config.batch_size;
        let batch = sample_batch(data, cfg.frames, b, &mut self.rng)?;
        let z0 = self.model.sample_z0(b, &mut self.rng)?;
        let labels = batch.labels.clone();
        let noise_seed = rng::index(&mut self.rng, usize::MAX) as u64;

        // Fakes come from a train-mode generator pass held as constants.
        let (fake, g_updates) = {
            let mut s = self.model.session(Mode::Train);
            let z = s.input_ref(&z0);
            let l = labels.as_deref().map(|l| self.model.one_hot(l)).transpose()?.map(|t| s.input(t));
            let v = s.generate(z, l)?;
            (s.value(v)?.clone(), s.take_bn_updates())
        };
        let (loss, grads, d_updates) = {
            let mut s = self.model.session(Mode::Train).trainable(is_discriminator);
            if self.gan() {
                s = s.disc_noise(self.config.noise_sigma, noise_seed).without_disc_gamma();
            }
            let (xr, xf) = (s.input(batch.videos), s.input(fake));
            let sr = s.discriminate(xr, labels.as_deref())?;
            let sf = s.discriminate(xf, labels.as_deref())?;
            let loss = critic_loss(&mut s.graph, self.config.loss, sr, sf)?;
            let value = s.value(loss)?.item().unwrap().to_f64_lossy();
            if !value.is_finite() {
                (value, BTreeMap::new(), Vec::new())
            } else {
                (value, s.gradients(loss)?, s.take_bn_updates())
            }
        };
        if !loss.is_finite() {
            return Ok(loss);
        }
        let opt = self.optimizer();
        let gan = self.gan();
        let params = self.model.store.iter_mut().filter(|(n, _)| !(gan && n.ends_with(".gamma")));
        opt.step(params, &grads, &mut self.opt_d)?;
        self.model.store.apply_bn_updates(&g_updates)?;
        self.model.store.apply_bn_updates(&d_updates)?;
        if self.config.clip == ClipKind::Weight {
            weight_clip(&mut self.model, self.config.clip_bound, is_discriminator)?;
        }
        self.summary.critic_updates += 1;
        Ok(loss)
    }

    fn generator_step(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let z0 = self.model.sample_z0(b, &mut self.rng)?;
        let labels = self.fake_labels(b);
        let noise_seed = rng::index(&mut self.rng, usize::MAX) as u64;
        let (loss, grads, updates) = {
            let mut s = self.model.session(Mode::Train).trainable(is_generator);
            if self.gan() {
                s = s.disc_noise(self.config.noise_sigma, noise_seed).without_disc_gamma();
            }
            let z = s.input_ref(&z0);
            let l = labels.as_deref().map(|l| self.model.one_hot(l)).transpose()?.map(|t| s.input(t));
            let v = s.generate(z, l)?;
            let sf = s.discriminate(v, labels.as_deref())?;
            let loss = generator_loss(&mut s.graph, self.config.loss, sf)?;
            let value = s.value(loss)?.item().unwrap().to_f64_lossy();
            if !value.is_finite() {
                (value, BTreeMap::new(), Vec::new())
            } else {
                (value, s.gradients(loss)?, s.take_bn_updates())
            }
        };
        if !loss.is_finite() {
            return Ok(loss);
        }
        let opt = self.optimizer();
        opt.step(self.model.store.iter_mut(), &grads, &mut self.opt_g)?;
        self.model.store.apply_bn_updates(&updates)?;
        self.summary.generator_updates += 1;
        Ok(loss)
    }

    /// One iteration: `n_critic` critic updates, one generator update, then
    /// clipping when scheduled. Returns the record and the clip report.
    pub fn step(&mut self, data: &dyn ClipSource<T>) -> Result<(MetricRecord, Option<ClipReport>)> {
        let t = self.summary.iterations + 1;
        let mut loss_d = 0.0;
        for _ in 0..self.config.n_critic {
            loss_d = self.critic_step(data)?;
            if !loss_d.is_finite() {
                break;
            }
        }
        let loss_g = if loss_d.is_finite() { self.generator_step()? } else { f64::NAN };
        self.summary.iterations = t;
        let mut record = MetricRecord { iter: t, loss_d, loss_g, wall_ms: 0, max_sigma: None };
        if !loss_d.is_finite() || !loss_g.is_finite() {
            return Ok((record, None));
        }
        let report = if self.config.clips_at(t) {
            let r = svc_apply(&mut self.model.store, is_discriminator)?;
            record.max_sigma = Some(r.max_sigma());
            self.summary.clip_events.push(t);
            Some(r)
        } else {
            None
        };
        Ok((record, report))
    }

    /// Run until `config.iterations` iterations are done. A non-finite loss
    /// is logged, handed to the observer, and aborts with
    /// [`Error::Divergence`].
    pub fn run(&mut self, data: &dyn ClipSource<T>, observer: &mut dyn TrainObserver<T>) -> Result<TrainSummary> {
        let start = observer.now_ms();
        while self.summary.iterations < self.config.iterations {
            let (mut record, report) = self.step(data)?;
            record.wall_ms = observer.now_ms().saturating_sub(start);
            observer.on_record(&record)?;
            if !record.loss_d.is_finite() || !record.loss_g.is_finite() {
                observer.on_divergence(record.iter, &self.model)?;
                return Err(Error::Divergence { iter: record.iter, loss_d: record.loss_d, loss_g: record.loss_g });
            }
            if let Some(r) = report {
                observer.on_clip(record.iter, &r)?;
            }
            let every = self.config.checkpoint_every;
            if every > 0 && record.iter % every == 0 && record.iter != self.config.iterations {
                observer.on_checkpoint(record.iter, &self.model)?;
            }
        }
        observer.on_checkpoint(self.summary.iterations, &self.model)?;
        Ok(self.summary.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn loss_values() {
        assert_eq!(wgan_losses(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), (-1.0, 0.0));
        assert_eq!(wgan_losses(&[0.3], &[0.3]).unwrap().0, 0.0);
        let (d, _) = gan_losses(&[0.5], &[0.5]).unwrap();
        assert!((d - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let (d, _) = gan_losses(&[1.0], &[0.0]).unwrap();
        assert!(d < 1e-6);
        assert!(wgan_losses(&[], &[1.0]).is_err());
    }

    #[test]
    fn rmsprop_constant_gradient() {
        let mut p: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
        p.insert("a.w".into(), Tensor::from_vec(&[2], vec![10.0, -3.0]).unwrap());
        let grads: BTreeMap<String, Tensor<f64>> = [("a.w".into(), Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap())].into_iter().collect();
        let mut st = OptState::default();
        let opt = RmsProp::new(0.01);
        for _ in 0..200 {
            let before = p["a.w"].clone();
            opt.step(p.iter_mut().map(|(k, v)| (k.as_str(), v)), &grads, &mut st).unwrap();
            let step = before.sub(&p["a.w"]).unwrap();
            if st.steps == 200 {
                assert!((step.data()[0] - 0.01).abs() < 1e-9);
                assert!((step.data()[1] + 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::new(20);
        let at: Vec<u64> = (1..=20).filter(|&t| c.clips_at(t)).collect();
        assert_eq!(at, vec![1, 6, 11, 16]);
        let every = TrainConfig { n_clip: 1, ..TrainConfig::new(3) };
        assert!((1..=3).all(|t| every.clips_at(t)));
    }
}

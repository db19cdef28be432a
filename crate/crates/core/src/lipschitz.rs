//! Singular value clipping, per-layer Lipschitz constants and their product
//! bound, plus a sampling estimate of the actual constant.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::model::{LayerEntry, ParamStore};
use crate::nn::{BnState, LayerKind};
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::Tensor;
// Unused when a dependency links std, which brings the inherent methods.
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

/// Smallest γ kept by [`clip_bn_gamma`].
pub const GAMMA_FLOOR: f64 = 1e-8;

/// `U·diag(min(S, smax))·Vᵀ`; returns `w` unchanged when no singular value
/// exceeds `smax`.
pub fn clip_singular_values(w: &Matrix, smax: f64) -> Result<Matrix> {
    if !(smax > 0.0) {
        return Err(Error::InvalidParameter(format!("smax must be positive, got {smax}")));
    }
    let d = svd(w)?;
    if d.sigma_max() <= smax {
        return Ok(w.clone());
    }
    let clipped: Vec<f64> = d.s.iter().map(|&s| s.min(smax)).collect();
    Ok(d.compose(&clipped))
}

/// Largest singular value.
pub fn spectral_norm(w: &Matrix) -> Result<f64> {
    Ok(svd(w)?.sigma_max())
}

/// `[out, ...] → out × (product of the rest)`, row-major.
pub fn matricize<T: Real>(w: &Tensor<T>) -> Result<Matrix> {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    Matrix::from_vec(rows, cols, w.data().iter().map(|v| v.to_f64_lossy()).collect())
}

/// Inverse of [`matricize`].
pub fn dematricize<T: Real>(m: &Matrix, shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::from_vec(shape, m.data().iter().map(|&v| T::from_f64_lossy(v)).collect())
}

/// Clamp each `γ_c` into `[1e-8, sqrt(σ_c² + ε)]`.
pub fn clip_bn_gamma<T: Real>(state: &BnState<T>) -> BnState<T> {
    let mut out = state.clone();
    for (g, &s) in out.gamma.data_mut().iter_mut().zip(state.running_std.data()) {
        let s = s.to_f64_lossy();
        let bound = (s * s + state.eps).sqrt();
        let v = g.to_f64_lossy();
        if !(v >= GAMMA_FLOOR && v <= bound) {
            *g = T::from_f64_lossy(if v > bound { bound } else { GAMMA_FLOOR });
        }
    }
    out
}

/// Outcome of clipping one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerClip {
    pub name: String,
    pub kind: LayerKind,
    /// Spectral norm (or largest batch-norm slope) before clipping.
    pub before: f64,
    pub after: f64,
}

/// Result of [`svc_apply`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub layers: Vec<LayerClip>,
}

impl ClipReport {
    /// Post-clip constant per layer.
    pub fn max_sigma(&self) -> BTreeMap<String, f64> {
        self.layers.iter().map(|l| (l.name.clone(), l.after)).collect()
    }

    pub fn worst(&self) -> f64 {
        self.layers.iter().map(|l| l.after).fold(0.0, f64::max)
    }
}

/// Lipschitz constant of one registered layer: spectral norm of the
/// (matricized) weight, the largest inference-mode batch-norm slope, or 1
/// for activations.
pub fn layer_constant<T: Real>(store: &ParamStore<T>, entry: &LayerEntry) -> Result<f64> {
    match entry.kind() {
        k if k.has_weight() => spectral_norm(&matricize(store.get(&format!("{}.w", entry.name))?)?),
        LayerKind::Batchnorm => Ok(store.bn_state(&entry.name)?.lipschitz()),
        LayerKind::LeakyRelu => Ok(entry.spec.slope.max(1.0)),
        _ => Ok(1.0),
    }
}

/// Clip every layer selected by `filter`: weights by singular value
/// clipping, batch-norm γ by the slope bound; activations are left alone.
pub fn svc_apply<T: Real>(store: &mut ParamStore<T>, filter: fn(&str) -> bool) -> Result<ClipReport> {
    let entries: Vec<LayerEntry> = store.layers().iter().filter(|l| filter(&l.name)).cloned().collect();
    let mut report = ClipReport::default();
    for entry in entries {
        let name = entry.name.clone();
        match entry.kind() {
            k if k.has_weight() => {
                let key = format!("{name}.w");
                let w = store.get(&key)?;
                let shape = w.shape().to_vec();
                let m = matricize(w)?;
                let d = svd(&m)?;
                let before = d.sigma_max();
                if before > 1.0 {
                    let clipped: Vec<f64> = d.s.iter().map(|&s| s.min(1.0)).collect();
                    store.insert(&key, dematricize(&d.compose(&clipped), &shape)?)?;
                }
                let after = spectral_norm(&matricize(store.get(&key)?)?)?;
                report.layers.push(LayerClip { name, kind: k, before, after });
            }
            LayerKind::Batchnorm => {
                let state = store.bn_state(&name)?;
                let before = state.lipschitz();
                let clipped = clip_bn_gamma(&state);
                let after = clipped.lipschitz();
                store.set_bn_state(&name, clipped)?;
                report.layers.push(LayerClip { name, kind: LayerKind::Batchnorm, before, after });
            }
            _ => {}
        }
    }
    Ok(report)
}

/// Per-layer constant in a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    pub name: String,
    pub kind: LayerKind,
    pub k: f64,
}

/// Product bound `K = ∏ K_n` over a layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub layers: Vec<LayerBound>,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
}

/// Certificate from per-layer constants.
pub fn compose_bound(layers: Vec<LayerBound>) -> Result<LipschitzCertificate> {
    if let Some(bad) = layers.iter().find(|l| !(l.k >= 0.0) || !l.k.is_finite()) {
        return Err(Error::NonFinite(format!("layer constant of {} is {}", bad.name, bad.k)));
    }
    let k = layers.iter().map(|l| l.k).product();
    Ok(LipschitzCertificate { layers, k, iteration: None })
}

/// Certificate for the layers of a store selected by `filter`.
pub fn certify<T: Real>(store: &ParamStore<T>, filter: fn(&str) -> bool) -> Result<LipschitzCertificate> {
    let mut bounds = Vec::new();
    for entry in store.layers().iter().filter(|l| filter(&l.name)) {
        bounds.push(LayerBound { name: entry.name.clone(), kind: entry.kind(), k: layer_constant(store, entry)? });
    }
    compose_bound(bounds)
}

/// Result of [`empirical_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed `|f(x₁) − f(x₂)| / ‖x₁ − x₂‖`.
    pub max_ratio: f64,
    pub pairs: usize,
    /// Pairs dropped because the inputs coincided.
    pub skipped: usize,
}

/// Lower bound on the Lipschitz constant of a scalar-valued batched map.
///
/// Half the pairs are independent draws from `sample`; the rest are
/// `(x, x + δ)` with `‖δ‖ = delta` in a random direction. `f` maps a batch
/// `[B, ...]` to `B` outputs and must be deterministic.
pub fn empirical_lipschitz<T: Real>(
    f: impl Fn(&Tensor<T>) -> Result<Vec<T>>,
    mut sample: impl FnMut(&mut SeededRng) -> Result<Tensor<T>>,
    n_pairs: usize,
    delta: f64,
    rng: &mut SeededRng,
) -> Result<LipschitzEstimate> {
    if n_pairs == 0 {
        return Err(Error::InvalidParameter("n_pairs must be >= 1".into()));
    }
    const CHUNK: usize = 32;
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    let mut done = 0;
    while done < n_pairs {
        let count = CHUNK.min(n_pairs - done);
        let mut left = Vec::with_capacity(count);
        let mut right = Vec::with_capacity(count);
        for i in 0..count {
            let a = sample(rng)?;
            let b = if (done + i) % 2 == 0 {
                sample(rng)?
            } else {
                let dir: Vec<f64> = (0..a.numel()).map(|_| rng::normal(rng, 0.0, 1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let data = a.data().iter().zip(&dir).map(|(&x, &d)| x + T::from_f64_lossy(delta * d / norm)).collect();
                Tensor::from_vec(a.shape(), data)?
            };
            left.push(a);
            right.push(b);
        }
        let fl = f(&Tensor::stack(&left.iter().collect::<Vec<_>>())?)?;
        let fr = f(&Tensor::stack(&right.iter().collect::<Vec<_>>())?)?;
        if fl.len() != count || fr.len() != count {
            return Err(Error::ShapeMismatch { op: "empirical_lipschitz", lhs: alloc::vec![count], rhs: alloc::vec![fl.len()] });
        }
        for i in 0..count {
            let dist = left[i]
                .data()
                .iter()
                .zip(right[i].data())
                .map(|(&x, &y)| {
                    let d = x.to_f64_lossy() - y.to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                skipped += 1;
                continue;
            }
            let diff = (fl[i].to_f64_lossy() - fr[i].to_f64_lossy()).abs();
            max_ratio = max_ratio.max(diff / dist);
        }
        done += count;
    }
    Ok(LipschitzEstimate { max_ratio, pairs: n_pairs - skipped, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{is_discriminator, Model, ModelConfig};
    use crate::tensor::Init;
    use alloc::vec;

    #[test]
    fn diagonal_clip() {
        let c = clip_singular_values(&Matrix::diag(&[3.0, 0.5]), 1.0).unwrap();
        let expect = Matrix::diag(&[1.0, 0.5]);
        for (a, b) in c.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(clip_singular_values(&Matrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn gamma_bounds() {
        let mut s = BnState::<f64>::new(3, 1e-5, 0.9).unwrap();
        s.gamma = Tensor::from_vec(&[3], vec![2.0, 0.5, -4.0]).unwrap();
        s.running_std = Tensor::from_vec(&[3], vec![1.0, 1.0, 0.0]).unwrap();
        let c = clip_bn_gamma(&s);
        assert!((c.gamma.data()[0] - (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        assert_eq!(c.gamma.data()[1], 0.5);
        assert_eq!(c.gamma.data()[2], GAMMA_FLOOR);
        s.gamma = Tensor::from_vec(&[3], vec![0.0, 1e-12, -1e-12]).unwrap();
        let c = clip_bn_gamma(&s);
        assert_eq!(c.gamma.data(), &[1e-8, 1e-8, 1e-8]);
    }

    #[test]
    fn matricize_round_trip() {
        let w = Tensor::<f64>::create(&[4, 3, 2, 2, 2], Init::Normal { mean: 0.0, std: 1.0 }, 2).unwrap();
        let m = matricize(&w).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 24));
        assert_eq!(dematricize::<f64>(&m, w.shape()).unwrap(), w);
    }

    #[test]
    fn product_rule() {
        let b = |k| LayerBound { name: "x".into(), kind: LayerKind::Linear, k };
        assert_eq!(compose_bound(vec![b(0.5), b(0.5)]).unwrap().k, 0.25);
        assert!(compose_bound(vec![b(f64::NAN)]).is_err());
    }

    #[test]
    fn clipped_tiny_critic_is_certified() {
        let mut m = Model::<f64>::build(ModelConfig::preset("tiny").unwrap(), 3).unwrap();
        let before = certify(&m.store, is_discriminator).unwrap();
        assert!(before.k > 1.0);
        let report = svc_apply(&mut m.store, is_discriminator).unwrap();
        assert!(report.worst() <= 1.0 + 1e-6);
        assert!(certify(&m.store, is_discriminator).unwrap().k <= 1.0 + 1e-5);
    }
}

//! Central finite differences, the oracle for every backward rule.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Graph, Var};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::model::{is_generator, Model, ModelConfig};
use crate::nn::Mode;
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::{Init, Tensor};
use crate::train::{critic_loss, generator_loss, LossKind};

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element `i`.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&Tensor<T>) -> Result<T>, x: &Tensor<T>, h: T) -> Result<Tensor<T>> {
    let coords: Vec<usize> = (0..x.numel()).collect();
    let partial = finite_diff_at(&mut f, x, h, &coords)?;
    Tensor::from_vec(x.shape(), partial)
}

/// Central differences at selected flat coordinates only.
pub fn finite_diff_at<T: Real>(mut f: impl FnMut(&Tensor<T>) -> Result<T>, x: &Tensor<T>, h: T, coords: &[usize]) -> Result<Vec<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidParameter(alloc::format!("finite difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let two_h = h + h;
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe)?;
            probe.data_mut()[i] = orig - h;
            let down = f(&probe)?;
            probe.data_mut()[i] = orig;
            Ok((up - down) / two_h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>();
    let diff = norm(&mut a.iter().zip(b).map(|(&x, &y)| x.to_f64_lossy() - y.to_f64_lossy()));
    let na = norm(&mut a.iter().map(|x| x.to_f64_lossy()));
    let nb = norm(&mut b.iter().map(|x| x.to_f64_lossy()));
    let scale = if na > nb { na } else { nb };
    if scale == 0.0 {
        return if diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num_traits::Float::sqrt(diff / scale)
}

/// One line of the self-check table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub op: String,
    pub trials: usize,
    /// Largest relative error over all trials.
    pub worst: f64,
    pub passed: bool,
}

type Builder<'b> = &'b dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

/// Relative error between tape gradients and central differences of
/// `sum(build(inputs) ⊙ r)` for a fixed random `r`, worst over inputs.
pub fn check_graph(inputs: &[Tensor<f64>], seed: u64, h: f64, build: Builder<'_>) -> Result<f64> {
    let eval = |xs: &[Tensor<f64>], r: Option<&Tensor<f64>>| -> Result<(f64, Tensor<f64>, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let y = build(&mut g, &vars)?;
        let r = match r {
            Some(r) => r.clone(),
            None => Tensor::create(g.shape(y)?, Init::Normal { mean: 0.0, std: 1.0 }, seed)?,
        };
        let rv = g.constant(r.clone());
        let p = g.mul(y, rv)?;
        let loss = g.sum(p)?;
        let value = g.value(loss)?.data()[0];
        let grads = g.backward(loss)?;
        let mut gs = Vec::with_capacity(vars.len());
        for &v in &vars {
            gs.push(match grads.get(v) {
                Some(t) => t.clone(),
                None => Tensor::zeros(g.shape(v)?)?,
            });
        }
        Ok((value, r, gs))
    };
    let (_, r, analytic) = eval(inputs, None)?;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut xs = inputs.to_vec();
                xs[i] = x.clone();
                Ok(eval(&xs, Some(&r))?.0)
            },
            &inputs[i],
            h,
        )?;
        worst = worst.max(relative_error(a.data(), numeric.data()));
    }
    Ok(worst)
}

fn normal(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<f64>> {
    Tensor::sample(shape, Init::Normal { mean: 0.0, std: 1.0 }, rng)
}

fn between(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng::index(rng, hi - lo + 1)
}

fn with_spatial(a: usize, b: usize, spatial: &[usize]) -> Vec<usize> {
    let mut s = vec![a, b];
    s.extend_from_slice(spatial);
    s
}

/// Random geometry and shapes for a strided (transposed) convolution whose
/// output is non-empty.
fn conv_case(rng: &mut SeededRng, dims: usize, transposed: bool) -> Result<(ConvGeometry, Vec<Tensor<f64>>)> {
    loop {
        let kernel: Vec<usize> = (0..dims).map(|_| between(rng, 1, 4)).collect();
        let stride = (0..dims).map(|_| between(rng, 1, 3)).collect();
        let padding = kernel.iter().map(|&k| rng::index(rng, k)).collect();
        let geom = ConvGeometry { kernel, stride, padding };
        let top = if dims == 3 { 3 } else { 5 };
        let spatial: Vec<usize> = if transposed {
            (0..dims).map(|_| between(rng, 1, top)).collect()
        } else {
            geom.kernel.iter().map(|&k| k + rng::index(rng, top)).collect()
        };
        let ok = if transposed { geom.deconv_output(&spatial).is_ok() } else { geom.conv_output(&spatial).is_ok() };
        if !ok {
            continue;
        }
        let (n, ci, co) = (between(rng, 1, 2), between(rng, 1, 3), between(rng, 1, 3));
        let x = normal(&with_spatial(n, ci, &spatial), rng)?;
        let w = normal(&with_spatial(co, ci, &geom.kernel), rng)?;
        return Ok((geom, vec![x, w, normal(&[co], rng)?]));
    }
}

/// Finite-difference check of every differentiable operation: `trials`
/// random cases per operation in f64 with step `1e-6`.
pub fn op_suite(trials: usize, seed: u64, tol: f64) -> Result<Vec<CheckRow>> {
    const H: f64 = 1e-6;
    let ops = [
        "linear",
        "deconv1d",
        "deconv2d",
        "deconv3d",
        "conv3d",
        "batchnorm_train",
        "batchnorm_infer",
        "relu",
        "leaky_relu",
        "tanh",
        "sigmoid",
        "wgan_loss",
        "gan_loss",
    ];
    let mut rows = Vec::with_capacity(ops.len());
    for (k, op) in ops.iter().enumerate() {
        let mut rng = rng::seeded(rng::mix_seed(seed, k as u64));
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let case_seed = rng::mix_seed(seed ^ 0x5eed, (k * 100_000 + t) as u64);
            let e = match *op {
                "linear" => {
                    let (n, i, o) = (between(&mut rng, 1, 4), between(&mut rng, 1, 6), between(&mut rng, 1, 5));
                    let xs = [normal(&[n, i], &mut rng)?, normal(&[o, i], &mut rng)?, normal(&[o], &mut rng)?];
                    let bias = t % 2 == 0;
                    check_graph(&xs, case_seed, H, &|g, v| g.linear(v[0], v[1], bias.then_some(v[2])))?
                }
                "deconv1d" | "deconv2d" | "deconv3d" => {
                    let dims = op.as_bytes()[6] as usize - b'0' as usize;
                    let (geom, xs) = conv_case(&mut rng, dims, true)?;
                    check_graph(&xs, case_seed, H, &|g, v| {
                        let y = g.deconv(v[0], v[1], &geom)?;
                        g.channel_bias(y, v[2])
                    })?
                }
                "conv3d" => {
                    let (geom, xs) = conv_case(&mut rng, 3, false)?;
                    check_graph(&xs, case_seed, H, &|g, v| {
                        let y = g.conv(v[0], v[1], &geom)?;
                        g.channel_bias(y, v[2])
                    })?
                }
                "batchnorm_train" => {
                    let (n, c, inner) = (between(&mut rng, 2, 4), between(&mut rng, 1, 3), between(&mut rng, 1, 5));
                    let xs = [normal(&[n, c, inner], &mut rng)?, normal(&[c], &mut rng)?, normal(&[c], &mut rng)?];
                    let gamma = t % 3 != 0;
                    check_graph(&xs, case_seed, H, &|g, v| Ok(g.batch_norm_train(v[0], gamma.then_some(v[1]), v[2], 1e-5)?.0))?
                }
                "batchnorm_infer" => {
                    let (n, c) = (between(&mut rng, 1, 3), between(&mut rng, 1, 3));
                    let xs = [normal(&[n, c, 3], &mut rng)?, normal(&[c], &mut rng)?, normal(&[c], &mut rng)?];
                    let mean: Vec<f64> = (0..c).map(|_| rng::normal(&mut rng, 0.0, 1.0)).collect();
                    let std: Vec<f64> = (0..c).map(|_| rng::uniform(&mut rng, 0.5, 2.0)).collect();
                    check_graph(&xs, case_seed, H, &|g, v| g.batch_norm_infer(v[0], Some(v[1]), v[2], &mean, &std, 1e-5))?
                }
                "relu" | "leaky_relu" | "tanh" | "sigmoid" => {
                    let act = match *op {
                        "relu" => Activation::Relu,
                        "leaky_relu" => Activation::LeakyRelu(0.2),
                        "tanh" => Activation::Tanh,
                        _ => Activation::Sigmoid,
                    };
                    let xs = [normal(&[between(&mut rng, 1, 3), between(&mut rng, 1, 8)], &mut rng)?];
                    check_graph(&xs, case_seed, H, &|g, v| g.activation(v[0], act))?
                }
                _ => {
                    let kind = if *op == "wgan_loss" { LossKind::Wgan } else { LossKind::Gan };
                    let n = between(&mut rng, 1, 6);
                    let xs = [normal(&[n, 1], &mut rng)?, normal(&[n, 1], &mut rng)?];
                    let d = check_graph(&xs, case_seed, H, &|g, v| critic_loss(g, kind, v[0], v[1]))?;
                    d.max(check_graph(&xs[1..], case_seed, H, &|g, v| generator_loss(g, kind, v[0]))?)
                }
            };
            worst = worst.max(e);
        }
        rows.push(CheckRow { op: op.to_string(), trials, worst, passed: worst < tol });
    }
    Ok(rows)
}

/// Spot check of `mean D(G(z))` against central differences at `coords`
/// random generator weights, alternating between the temporal and image
/// generators. Runs in train mode on a batch of two.
pub fn end_to_end(config: &ModelConfig, coords: usize, seed: u64, tol: f64) -> Result<CheckRow> {
    // Small enough that few ReLU units cross their kink.
    const H: f64 = 1e-7;
    let mut model = Model::<f64>::build(config.clone(), seed)?;
    let mut rng = rng::seeded(rng::mix_seed(seed, 0xe2e));
    let z0 = model.sample_z0(2, &mut rng)?;
    let labels: Option<Vec<usize>> = config.is_conditional().then(|| vec![0, config.num_categories - 1]);
    let score = |m: &Model<f64>, grads: bool| -> Result<(f64, Option<alloc::collections::BTreeMap<String, Tensor<f64>>>)> {
        let mut s = m.session(Mode::Train).trainable(is_generator);
        let z = s.input_ref(&z0);
        let l = match &labels {
            Some(l) => Some(s.input(m.one_hot(l)?)),
            None => None,
        };
        let v = s.generate(z, l)?;
        let d = s.discriminate(v, labels.as_deref())?;
        let loss = s.graph.mean(d)?;
        let value = s.value(loss)?.data()[0];
        Ok((value, if grads { Some(s.gradients(loss)?) } else { None }))
    };
    let grads = score(&model, true)?.1.unwrap_or_default();
    let names: Vec<&String> = grads.keys().filter(|n| n.ends_with(".w")).collect();
    let (mut analytic, mut numeric) = (Vec::with_capacity(coords), Vec::with_capacity(coords));
    let central = |model: &mut Model<f64>, name: &str, k: usize, h: f64| -> Result<f64> {
        let orig = model.store.get(name)?.data()[k];
        model.store.get_mut(name)?.data_mut()[k] = orig + h;
        let up = score(model, false)?.0;
        model.store.get_mut(name)?.data_mut()[k] = orig - h;
        let down = score(model, false)?.0;
        model.store.get_mut(name)?.data_mut()[k] = orig;
        Ok((up - down) / (2.0 * h))
    };
    // A coordinate whose difference quotient changes when the step halves
    // straddles a ReLU kink; the quotient is meaningless there, so redraw.
    let mut redraws = 0;
    let mut i = 0;
    while analytic.len() < coords {
        let prefix = if i % 2 == 0 { "g0." } else { "g1." };
        let mut pool: Vec<&String> = names.iter().copied().filter(|n| n.starts_with(prefix)).collect();
        if pool.is_empty() {
            pool = names.clone();
        }
        let name = pool[rng::index(&mut rng, pool.len())];
        let k = rng::index(&mut rng, grads[name].numel());
        let full = central(&mut model, name, k, H)?;
        let half = central(&mut model, name, k, H / 2.0)?;
        let scale = full.abs().max(half.abs()).max(grads[name].data()[k].abs()).max(1e-6);
        if (full - half).abs() > 1e-2 * tol * scale && redraws < coords {
            redraws += 1;
            continue;
        }
        i += 1;
        analytic.push(grads[name].data()[k]);
        numeric.push(full);
    }
    let worst = relative_error(&analytic, &numeric);
    Ok(CheckRow { op: alloc::format!("end_to_end_{}", config.name), trials: coords, worst, passed: worst < tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_vec(&[3], alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::scalar(3.0);
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::<f64>::scalar(1.0);
        assert!(finite_diff_grad(|t| Ok(t.sum()), &x, 0.0).is_err());
    }
}

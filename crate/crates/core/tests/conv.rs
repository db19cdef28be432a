//! im2col kernels against direct loops, and adjointness of the pairs.

use tgan_core::conv::{conv_backward_data, conv_forward, deconv_backward_data, deconv_forward, ConvGeometry};
use tgan_core::rng::{self, SeededRng};
use tgan_core::{Init, Tensor};

fn normal(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::sample(shape, Init::Normal { mean: 0.0, std: 1.0 }, rng).unwrap()
}

/// Lift an N-d problem to 3 spatial axes with unit extents in front.
fn lift(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

/// `y[n,o,p] = Σ x[n,c,p·s − pad + k] · w[o,c,k]`.
fn conv_loops(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeometry) -> Tensor<f64> {
    let (n, ci, co) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let xs = lift(&x.shape()[2..], 1);
    let (k, s, p) = (lift(&g.kernel, 1), lift(&g.stride, 1), lift(&g.padding, 0));
    let os: Vec<usize> = (0..3).map(|a| (xs[a] + 2 * p[a] - k[a]) / s[a] + 1).collect();
    let mut shape = vec![n, co];
    shape.extend(&os[3 - g.dims()..]);
    let mut y = Tensor::zeros(&shape).unwrap();
    let xi = |b: usize, c: usize, q: [usize; 3]| ((((b * ci + c) * xs[0] + q[0]) * xs[1] + q[1]) * xs[2]) + q[2];
    let wi = |o: usize, c: usize, q: [usize; 3]| ((((o * ci + c) * k[0] + q[0]) * k[1] + q[1]) * k[2]) + q[2];
    let mut idx = 0;
    for b in 0..n {
        for o in 0..co {
            for a0 in 0..os[0] {
                for a1 in 0..os[1] {
                    for a2 in 0..os[2] {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for k0 in 0..k[0] {
                                for k1 in 0..k[1] {
                                    for k2 in 0..k[2] {
                                        let pos = [
                                            (a0 * s[0] + k0) as isize - p[0] as isize,
                                            (a1 * s[1] + k1) as isize - p[1] as isize,
                                            (a2 * s[2] + k2) as isize - p[2] as isize,
                                        ];
                                        if (0..3).all(|a| pos[a] >= 0 && (pos[a] as usize) < xs[a]) {
                                            let q = [pos[0] as usize, pos[1] as usize, pos[2] as usize];
                                            acc += x.data()[xi(b, c, q)] * w.data()[wi(o, c, [k0, k1, k2])];
                                        }
                                    }
                                }
                            }
                        }
                        y.data_mut()[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    y
}

/// Scatter form: `y[n,o,i·s − pad + k] += x[n,c,i] · w[o,c,k]`.
fn deconv_loops(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeometry) -> Tensor<f64> {
    let (n, ci, co) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let xs = lift(&x.shape()[2..], 1);
    let (k, s, p) = (lift(&g.kernel, 1), lift(&g.stride, 1), lift(&g.padding, 0));
    let os: Vec<usize> = (0..3).map(|a| (xs[a] - 1) * s[a] + k[a] - 2 * p[a]).collect();
    let mut shape = vec![n, co];
    shape.extend(&os[3 - g.dims()..]);
    let mut y = Tensor::zeros(&shape).unwrap();
    let yi = |b: usize, o: usize, q: [usize; 3]| ((((b * co + o) * os[0] + q[0]) * os[1] + q[1]) * os[2]) + q[2];
    for b in 0..n {
        for c in 0..ci {
            for i0 in 0..xs[0] {
                for i1 in 0..xs[1] {
                    for i2 in 0..xs[2] {
                        let xv = x.data()[(((b * ci + c) * xs[0] + i0) * xs[1] + i1) * xs[2] + i2];
                        for o in 0..co {
                            for k0 in 0..k[0] {
                                for k1 in 0..k[1] {
                                    for k2 in 0..k[2] {
                                        let pos = [
                                            (i0 * s[0] + k0) as isize - p[0] as isize,
                                            (i1 * s[1] + k1) as isize - p[1] as isize,
                                            (i2 * s[2] + k2) as isize - p[2] as isize,
                                        ];
                                        if (0..3).all(|a| pos[a] >= 0 && (pos[a] as usize) < os[a]) {
                                            let q = [pos[0] as usize, pos[1] as usize, pos[2] as usize];
                                            let wv = w.data()[(((o * ci + c) * k[0] + k0) * k[1] + k1) * k[2] + k2];
                                            y.data_mut()[yi(b, o, q)] += xv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn geometry(rng: &mut SeededRng, dims: usize) -> ConvGeometry {
    let kernel: Vec<usize> = (0..dims).map(|_| 1 + rng::index(rng, 4)).collect();
    let stride = (0..dims).map(|_| 1 + rng::index(rng, 3)).collect();
    let padding = kernel.iter().map(|&k| rng::index(rng, k)).collect();
    ConvGeometry { kernel, stride, padding }
}

fn shape(n: usize, c: usize, spatial: &[usize]) -> Vec<usize> {
    let mut s = vec![n, c];
    s.extend(spatial);
    s
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_loops() {
    let mut rng = rng::seeded(11);
    for trial in 0..60 {
        let dims = 1 + trial % 3;
        let g = geometry(&mut rng, dims);
        let spatial: Vec<usize> = g.kernel.iter().map(|&k| k + rng::index(&mut rng, 5)).collect();
        let (ci, co) = (1 + rng::index(&mut rng, 3), 1 + rng::index(&mut rng, 3));
        let x = normal(&shape(2, ci, &spatial), &mut rng);
        let w = normal(&shape(co, ci, &g.kernel), &mut rng);
        let fast = conv_forward(&x, &w, &g).unwrap();
        assert!(max_diff(&fast, &conv_loops(&x, &w, &g)) < 1e-12, "trial {trial} {g:?}");
    }
}

#[test]
fn deconv_matches_scatter_loops() {
    let mut rng = rng::seeded(12);
    let mut checked = 0;
    for trial in 0..80 {
        let dims = 1 + trial % 3;
        let g = geometry(&mut rng, dims);
        let spatial: Vec<usize> = (0..dims).map(|_| 1 + rng::index(&mut rng, 4)).collect();
        if g.deconv_output(&spatial).is_err() {
            continue;
        }
        let (ci, co) = (1 + rng::index(&mut rng, 3), 1 + rng::index(&mut rng, 3));
        let x = normal(&shape(2, ci, &spatial), &mut rng);
        let w = normal(&shape(co, ci, &g.kernel), &mut rng);
        let fast = deconv_forward(&x, &w, &g).unwrap();
        assert!(max_diff(&fast, &deconv_loops(&x, &w, &g)) < 1e-12, "trial {trial} {g:?}");
        checked += 1;
    }
    assert!(checked >= 50);
}

#[test]
fn adjoint_identities() {
    let mut rng = rng::seeded(13);
    for trial in 0..60 {
        let dims = 1 + trial % 3;
        let g = geometry(&mut rng, dims);
        let spatial: Vec<usize> = g.kernel.iter().map(|&k| k + rng::index(&mut rng, 6)).collect();
        let (ci, co) = (1 + rng::index(&mut rng, 3), 1 + rng::index(&mut rng, 3));
        let x = normal(&shape(2, ci, &spatial), &mut rng);
        let w = normal(&shape(co, ci, &g.kernel), &mut rng);
        let out = g.conv_output(&spatial).unwrap();
        let y = normal(&shape(2, co, &out), &mut rng);
        // ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩
        let lhs = conv_forward(&x, &w, &g).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv_backward_data(&y, &w, &g, &spatial).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "conv trial {trial}");

        // ⟨deconv(u), v⟩ = ⟨u, deconvᵀ(v)⟩
        let Ok(v_shape) = g.deconv_output(&out) else { continue };
        let wd = normal(&shape(co, ci, &g.kernel), &mut rng);
        let u = normal(&shape(2, ci, &out), &mut rng);
        let v = normal(&shape(2, co, &v_shape), &mut rng);
        let lhs = deconv_forward(&u, &wd, &g).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&deconv_backward_data(&v, &wd, &g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "deconv trial {trial}");
    }
}

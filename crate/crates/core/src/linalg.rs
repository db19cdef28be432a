//! Dense `f64` matrices, one-sided Jacobi SVD and power iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
// Unused when a dependency links std, which brings the inherent methods.
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

/// Row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DataLength { len: data.len(), shape: vec![rows, cols] });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_fn(values.len(), values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Interpret a rank-2 tensor as a matrix.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch { op: "matrix", lhs: t.shape().to_vec(), rhs: vec![0, 0] });
        }
        Ok(Self { rows: t.shape()[0], cols: t.shape()[1], data: t.data().iter().map(|v| v.to_f64_lossy()).collect() })
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(&[self.rows, self.cols], self.data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: vec![self.rows, self.cols], rhs: vec![other.rows, other.cols] });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        crate::scalar::gemm(
            1.0,
            crate::scalar::MatRef::row_major(&self.data, self.rows, self.cols),
            crate::scalar::MatRef::row_major(&other.data, other.rows, other.cols),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks(self.cols)) {
            *o = dot(row, x);
        }
    }

    fn mul_t_vec(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&xi, row) in x.iter().zip(self.data.chunks(self.cols)) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += xi * a;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin singular value decomposition `W = U·diag(S)·Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `m × r`, orthonormal columns.
    pub u: Matrix,
    /// `r = min(m, n)` values, descending, non-negative.
    pub s: Vec<f64>,
    /// `n × r`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// `U·diag(values)·Vᵀ`.
    pub fn compose(&self, values: &[f64]) -> Matrix {
        let (m, n, r) = (self.u.rows, self.v.rows, self.s.len());
        let mut us = self.u.clone();
        for i in 0..m {
            for k in 0..r {
                us.data[i * r + k] *= values[k];
            }
        }
        let out = us.matmul(&self.v.transpose()).expect("factors share the inner dimension");
        debug_assert_eq!((out.rows, out.cols), (m, n));
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.compose(&self.s)
    }
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Rotate columns `i < j` of a column-major buffer with column length `len`.
#[inline]
fn rotate(buf: &mut [f64], len: usize, i: usize, j: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(j * len);
    let ci = &mut head[i * len..(i + 1) * len];
    let cj = &mut tail[..len];
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// One-sided (Hestenes) Jacobi on the `p` columns of a `q × p` column-major
/// buffer with `q ≥ p`. Returns the right rotations `V` (column-major p×p).
fn hestenes(work: &mut [f64], q: usize, p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p * p];
    for k in 0..p {
        v[k * p + k] = 1.0;
    }
    let mut norms: Vec<f64> = (0..p).map(|k| dot(&work[k * q..(k + 1) * q], &work[k * q..(k + 1) * q])).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&work[i * q..(i + 1) * q], &work[j * q..(j + 1) * q]);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(work, q, i, j, c, s);
                rotate(&mut v, p, i, j, c, s);
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
            }
        }
        for k in 0..p {
            norms[k] = dot(&work[k * q..(k + 1) * q], &work[k * q..(k + 1) * q]);
        }
        if !rotated {
            break;
        }
    }
    v
}

/// Extend the first `filled` orthonormal columns of a column-major `q × p`
/// buffer to a full orthonormal set using standard basis candidates.
fn complete_basis(u: &mut [f64], q: usize, p: usize, filled: &[bool]) {
    let mut basis: Vec<usize> = (0..p).filter(|&k| filled[k]).collect();
    let mut candidate = 0;
    for k in 0..p {
        if filled[k] {
            continue;
        }
        loop {
            let mut e = vec![0.0; q];
            e[candidate % q] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &b in &basis {
                    let col = &u[b * q..(b + 1) * q];
                    let proj = dot(col, &e);
                    for (x, &y) in e.iter_mut().zip(col) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                for (dst, x) in u[k * q..(k + 1) * q].iter_mut().zip(&e) {
                    *dst = x / norm;
                }
                basis.push(k);
                break;
            }
        }
    }
}

/// Thin SVD by one-sided Jacobi on the smaller dimension.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (m, n) = (a.rows, a.cols);
    if m == 0 || n == 0 {
        return Err(Error::ZeroExtent(vec![m, n]));
    }
    let transposed = m < n;
    // Columns of the working matrix: columns of A, or rows of A when wide.
    let (q, p) = if transposed { (n, m) } else { (m, n) };
    let mut work = vec![0.0; q * p];
    if transposed {
        work.copy_from_slice(&a.data);
    } else {
        for i in 0..m {
            for j in 0..n {
                work[j * m + i] = a.data[i * n + j];
            }
        }
    }
    let v = hestenes(&mut work, q, p);
    let mut sigma: Vec<f64> = (0..p).map(|k| dot(&work[k * q..(k + 1) * q], &work[k * q..(k + 1) * q]).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap().then(x.cmp(&y)));
    let smax = sigma[order[0]];
    let floor = smax * (q as f64) * f64::EPSILON;
    let mut left = vec![0.0; q * p];
    let mut right = vec![0.0; p * p];
    let mut filled = vec![false; p];
    let mut s = vec![0.0; p];
    for (dst, &src) in order.iter().enumerate() {
        right[dst * p..(dst + 1) * p].copy_from_slice(&v[src * p..(src + 1) * p]);
        if sigma[src] > floor && sigma[src] > 0.0 {
            s[dst] = sigma[src];
            for (l, &w) in left[dst * q..(dst + 1) * q].iter_mut().zip(&work[src * q..(src + 1) * q]) {
                *l = w / sigma[src];
            }
            filled[dst] = true;
        }
    }
    sigma.clear();
    complete_basis(&mut left, q, p, &filled);
    // Column-major q×p and p×p buffers into row-major matrices.
    let to_matrix = |buf: &[f64], rows: usize, cols: usize| Matrix::from_fn(rows, cols, |i, j| buf[j * rows + i]);
    let (lq, rp) = (to_matrix(&left, q, p), to_matrix(&right, p, p));
    let (u, v) = if transposed { (rp, lq) } else { (lq, rp) };
    Ok(Svd { u, s, v })
}

/// Result of [`power_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `AᵀA`; stops when the
/// relative change drops below `tol`.
pub fn power_iteration(a: &Matrix, iters: usize, tol: f64) -> Result<PowerEstimate> {
    if !a.is_finite() {
        return Err(Error::NonFinite("power iteration input".into()));
    }
    if a.data.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidParameter("power iteration needs a non-zero matrix".into()));
    }
    let mut r = rng::seeded(0x5eed_0f_5ca1e);
    let mut v: Vec<f64> = (0..a.cols).map(|_| rng::normal(&mut r, 0.0, 1.0)).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut u = vec![0.0; a.rows];
    let mut sigma = 0.0;
    for k in 1..=iters {
        a.mul_vec(&v, &mut u);
        let nu = dot(&u, &u).sqrt();
        if nu == 0.0 {
            // Start vector in the null space; restart along a basis direction.
            v.fill(0.0);
            v[k % a.cols] = 1.0;
            continue;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        a.mul_t_vec(&u, &mut v);
        let next = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= next);
        if (next - sigma).abs() <= tol * next {
            return Ok(PowerEstimate { sigma: next, iterations: k, converged: true });
        }
        sigma = next;
    }
    Ok(PowerEstimate { sigma, iterations: iters, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(m: usize, n: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed);
        Matrix::from_fn(m, n, |_, _| 0.0).map_in_place(|_| rng::normal(&mut r, 0.0, 1.0))
    }

    impl Matrix {
        fn map_in_place(mut self, mut f: impl FnMut(f64) -> f64) -> Self {
            for v in &mut self.data {
                *v = f(*v);
            }
            self
        }
    }

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    fn residual(a: &Matrix, d: &Svd) -> f64 {
        let r = d.reconstruct();
        let diff: f64 = r.data.iter().zip(&a.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        diff / a.frobenius().max(1e-30)
    }

    #[test]
    fn identity_and_diagonal() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.s, vec![1.0, 1.0, 1.0]);
        let d = svd(&Matrix::diag(&[0.5, 3.0])).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-15 && (d.s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_tall_and_wide() {
        for (m, n, seed) in [(8, 5, 1), (5, 8, 2), (13, 13, 3), (1, 6, 4), (6, 1, 5)] {
            let a = random(m, n, seed);
            let d = svd(&a).unwrap();
            assert!(residual(&a, &d) < 1e-12, "{m}x{n}");
            assert!(orthonormality_error(&d.u) < 1e-12);
            assert!(orthonormality_error(&d.v) < 1e-12);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_has_complete_bases() {
        // Rank one: outer product.
        let a = Matrix::from_fn(6, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let d = svd(&a).unwrap();
        assert!(residual(&a, &d) < 1e-12);
        assert!(orthonormality_error(&d.u) < 1e-12);
        assert!(d.s[1..].iter().all(|&s| s == 0.0));
        let z = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&z.u) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn power_iteration_simple_cases() {
        let e = power_iteration(&Matrix::diag(&[3.0, 1.0]), 1000, 1e-15).unwrap();
        assert!((e.sigma - 3.0).abs() < 1e-8);
        let e = power_iteration(&Matrix::identity(5), 1000, 1e-15).unwrap();
        assert!((e.sigma - 1.0).abs() < 1e-12);
        assert!(power_iteration(&Matrix::zeros(2, 2), 10, 1e-9).is_err());
    }

    #[test]
    fn power_iteration_flags_non_convergence() {
        let a = random(30, 30, 9);
        let e = power_iteration(&a, 2, 1e-15).unwrap();
        assert!(!e.converged);
        assert_eq!(e.iterations, 2);
    }
}

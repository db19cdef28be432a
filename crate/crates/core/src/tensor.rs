//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::scalar::Real;

/// Initializer for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    Zeros,
    Ones,
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
    /// `normal(0, sqrt(2 / fan_in))` where `fan_in` is the product of every
    /// axis except the leading (output channel) one.
    HeNormal,
}

/// N-dimensional real array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    if shape.contains(&0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Fan-in of a weight tensor: every axis except the output-channel axis.
pub fn fan_in(shape: &[usize]) -> usize {
    if shape.len() <= 1 {
        shape.first().copied().unwrap_or(1)
    } else {
        shape[1..].iter().product()
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::DataLength { len: data.len(), shape: shape.to_vec() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![value; n] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Deterministic creation from a seed.
    pub fn create(shape: &[usize], init: Init, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        Self::sample(shape, init, &mut rng)
    }

    /// Creation drawing from an existing stream.
    pub fn sample(shape: &[usize], init: Init, rng: &mut SeededRng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Constant { value } => vec![T::from_f64_lossy(value); n],
            Init::Uniform { low, high } => {
                if !(low <= high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::InvalidRange { low, high });
                }
                (0..n).map(|_| T::from_f64_lossy(rng::uniform(rng, low, high))).collect()
            }
            Init::Normal { mean, std } => {
                if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
                    return Err(Error::InvalidParameter(alloc::format!("normal std must be finite and non-negative, got {std}")));
                }
                (0..n).map(|_| T::from_f64_lossy(rng::normal(rng, mean, std))).collect()
            }
            Init::HeNormal => {
                let std = num_traits::Float::sqrt(2.0 / fan_in(shape) as f64);
                (0..n).map(|_| T::from_f64_lossy(rng::normal(rng, 0.0, std))).collect()
            }
        };
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape, rhs: shape.to_vec() });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data })
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::ShapeMismatch { op: "permute", lhs: self.shape.clone(), rhs: perm.to_vec() });
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::InvalidAxis { op: "permute", axis: p, rank });
            }
            seen[p] = true;
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let last = rank - 1;
        let (inner_len, inner_stride) = (out_shape[last], src_strides[last]);
        let mut idx = vec![0usize; rank];
        let outer: usize = out_shape[..last].iter().product();
        for _ in 0..outer {
            let base: usize = idx[..last].iter().zip(&src_strides[..last]).map(|(i, s)| i * s).sum();
            if inner_stride == 1 {
                out.extend_from_slice(&self.data[base..base + inner_len]);
            } else {
                out.extend((0..inner_len).map(|j| self.data[base + j * inner_stride]));
            }
            for ax in (0..last).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: out_shape, data: out })
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { op: "concat", axis, rank });
        }
        let mut shape = first.shape.clone();
        shape[axis] = 0;
        for p in parts {
            let same_off_axis = p.rank() == rank && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_off_axis {
                return Err(Error::ShapeMismatch { op: "concat", lhs: first.shape.clone(), rhs: p.shape.clone() });
            }
            shape[axis] += p.shape[axis];
        }
        let outer: usize = first.shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block: usize = p.shape[axis..].iter().product();
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Split along `axis` into consecutive pieces of the given extents.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { op: "split", axis, rank });
        }
        if sizes.iter().sum::<usize>() != self.shape[axis] || sizes.contains(&0) {
            return Err(Error::ShapeMismatch { op: "split", lhs: self.shape.clone(), rhs: sizes.to_vec() });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let row = self.shape[axis] * inner;
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &s in sizes {
            let mut shape = self.shape.clone();
            shape[axis] = s;
            let mut data = Vec::with_capacity(outer * s * inner);
            for o in 0..outer {
                let start = o * row + offset * inner;
                data.extend_from_slice(&self.data[start..start + s * inner]);
            }
            out.push(Self { shape, data });
            offset += s;
        }
        Ok(out)
    }

    /// Sub-range `[start, start + len)` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { op: "narrow", axis, rank });
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::ShapeMismatch { op: "narrow", lhs: self.shape.clone(), rhs: vec![start, len] });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let row = self.shape[axis] * inner;
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * row + start * inner;
            data.extend_from_slice(&self.data[s..s + len * inner]);
        }
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op, lhs: self.shape.clone(), rhs: other.shape.clone() });
        }
        Ok(Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "dot", lhs: self.shape.clone(), rhs: other.shape.clone() });
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Element-type conversion.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect() }
    }

    /// Rows `[i*block, (i+1)*block)` of the leading axis.
    pub fn index_leading(&self, i: usize) -> Result<Self> {
        self.narrow(0, i, 1).and_then(|t| {
            let shape = if t.rank() > 1 { t.shape[1..].to_vec() } else { vec![1] };
            t.into_reshape(&shape)
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch { op: "stack", lhs: first.shape.clone(), rhs: p.shape.clone() });
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

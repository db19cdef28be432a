//! Strided N-d convolution kernels (1 to 3 spatial axes) via im2col + GEMM.
//!
//! Weights are always laid out `[out_channels, in_channels, k...]`, for
//! convolutions and transposed convolutions alike. A transposed convolution
//! is computed as the exact adjoint of the convolution that maps its output
//! shape back to its input shape.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Output length of a strided convolution: `floor((L + 2p − k)/s) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution: `(L − 1)s − 2p + k`.
pub fn deconv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if len == 0 || stride == 0 || kernel == 0 {
        return None;
    }
    let grown = (len - 1) * stride + kernel;
    if grown <= 2 * padding {
        return None;
    }
    Some(grown - 2 * padding)
}

/// Per-axis kernel, stride and padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvGeometry {
    /// Same kernel, stride and padding on each of `dims` axes.
    pub fn cubic(dims: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel: vec![kernel; dims], stride: vec![stride; dims], padding: vec![padding; dims] }
    }

    pub fn dims(&self) -> usize {
        self.kernel.len()
    }

    fn check(&self, spatial: &[usize], op: &'static str) -> Result<()> {
        let d = self.dims();
        if !(1..=3).contains(&d) || self.stride.len() != d || self.padding.len() != d || spatial.len() != d {
            return Err(Error::ShapeMismatch { op, lhs: spatial.to_vec(), rhs: self.kernel.clone() });
        }
        Ok(())
    }

    pub fn conv_output(&self, spatial: &[usize]) -> Result<Vec<usize>> {
        self.check(spatial, "conv")?;
        (0..self.dims())
            .map(|i| {
                conv_out_len(spatial[i], self.kernel[i], self.stride[i], self.padding[i]).ok_or(Error::NonPositiveOutput {
                    op: "conv",
                    input: spatial[i],
                    kernel: self.kernel[i],
                    stride: self.stride[i],
                    padding: self.padding[i],
                })
            })
            .collect()
    }

    pub fn deconv_output(&self, spatial: &[usize]) -> Result<Vec<usize>> {
        self.check(spatial, "deconv")?;
        (0..self.dims())
            .map(|i| {
                deconv_out_len(spatial[i], self.kernel[i], self.stride[i], self.padding[i]).ok_or(Error::NonPositiveOutput {
                    op: "deconv",
                    input: spatial[i],
                    kernel: self.kernel[i],
                    stride: self.stride[i],
                    padding: self.padding[i],
                })
            })
            .collect()
    }

    fn lift(&self, input: &[usize], output: &[usize]) -> Geom3 {
        let pad = 3 - self.dims();
        let mut g = Geom3 { input: [1; 3], output: [1; 3], kernel: [1; 3], stride: [1; 3], padding: [0; 3] };
        for i in 0..self.dims() {
            g.input[pad + i] = input[i];
            g.output[pad + i] = output[i];
            g.kernel[pad + i] = self.kernel[i];
            g.stride[pad + i] = self.stride[i];
            g.padding[pad + i] = self.padding[i];
        }
        g
    }
}

/// Geometry lifted to exactly three spatial axes (leading axes of extent 1).
#[derive(Debug, Clone, Copy)]
struct Geom3 {
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl Geom3 {
    fn in_size(&self) -> usize {
        self.input.iter().product()
    }

    fn out_size(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_size(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }

    /// Input coordinate for output `o` and kernel tap `k` on `axis`.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride[axis] + k) as isize - self.padding[axis] as isize;
        (i >= 0 && (i as usize) < self.input[axis]).then_some(i as usize)
    }

    /// Range of outputs on the last axis whose source for tap `k` is in bounds.
    #[inline]
    fn valid_last(&self, k: usize) -> (usize, usize) {
        let (s, p, n_in, n_out) = (self.stride[2], self.padding[2], self.input[2], self.output[2]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if n_in + p > k { ((n_in - 1 + p - k) / s + 1).min(n_out) } else { 0 };
        (lo.min(n_out), hi.max(lo.min(n_out)))
    }
}

/// Unfold one sample `[C, D, H, W]` into `[C·kd·kh·kw, Od·Oh·Ow]`.
fn im2col<T: Real>(x: &[T], channels: usize, g: &Geom3, cols: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let plane = oh * ow;
    let p = g.out_size();
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * g.in_size()..(c + 1) * g.in_size()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = g.valid_last(e);
                    for o0 in 0..od {
                        let Some(i0) = g.source(0, o0, a) else {
                            dst[o0 * plane..(o0 + 1) * plane].fill(T::zero());
                            continue;
                        };
                        for o1 in 0..oh {
                            let seg = &mut dst[(o0 * oh + o1) * ow..(o0 * oh + o1 + 1) * ow];
                            let Some(i1) = g.source(1, o1, b) else {
                                seg.fill(T::zero());
                                continue;
                            };
                            let src = &xc[(i0 * ih + i1) * iw..(i0 * ih + i1 + 1) * iw];
                            seg[..lo].fill(T::zero());
                            seg[hi..].fill(T::zero());
                            if hi == lo {
                                continue;
                            }
                            let s = g.stride[2];
                            let first = (lo * s + e) - g.padding[2];
                            if s == 1 {
                                seg[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                            } else {
                                for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                                    *v = src[first + j * s];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into one sample.
fn col2im<T: Real>(cols: &[T], channels: usize, g: &Geom3, x: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let p = g.out_size();
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * g.in_size()..(c + 1) * g.in_size()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = g.valid_last(e);
                    for o0 in 0..od {
                        let Some(i0) = g.source(0, o0, a) else { continue };
                        for o1 in 0..oh {
                            let Some(i1) = g.source(1, o1, b) else { continue };
                            let seg = &src[(o0 * oh + o1) * ow..(o0 * oh + o1 + 1) * ow];
                            let dst = &mut xc[(i0 * ih + i1) * iw..(i0 * ih + i1 + 1) * iw];
                            if hi == lo {
                                continue;
                            }
                            let s = g.stride[2];
                            let first = (lo * s + e) - g.padding[2];
                            for (j, &v) in seg[lo..hi].iter().enumerate() {
                                dst[first + j * s] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

struct Layout {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    geom: Geom3,
    out_shape: Vec<usize>,
}

fn layout<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Layout> {
    let d = geom.dims();
    if x.rank() != d + 2 || w.rank() != d + 2 || w.shape()[1] != x.shape()[1] || w.shape()[2..] != geom.kernel[..] {
        return Err(Error::ShapeMismatch { op: "conv", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
    }
    let spatial = &x.shape()[2..];
    let out = geom.conv_output(spatial)?;
    let mut out_shape = vec![x.shape()[0], w.shape()[0]];
    out_shape.extend_from_slice(&out);
    Ok(Layout { batch: x.shape()[0], in_channels: x.shape()[1], out_channels: w.shape()[0], geom: geom.lift(spatial, &out), out_shape })
}

/// Strided convolution, no bias. `x: [N, C, S...]`, `w: [C', C, K...]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let l = layout(x, w, geom)?;
    let rows = l.in_channels * l.geom.kernel_size();
    let (p, in_sz) = (l.geom.out_size(), l.in_channels * l.geom.in_size());
    let mut out = vec![T::zero(); l.batch * l.out_channels * p];
    let mut cols = if l.geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
    let wmat = MatRef::row_major(w.data(), l.out_channels, rows);
    for n in 0..l.batch {
        let xn = &x.data()[n * in_sz..(n + 1) * in_sz];
        let rhs = if l.geom.is_pointwise() {
            xn
        } else {
            im2col(xn, l.in_channels, &l.geom, &mut cols);
            &cols
        };
        let yn = &mut out[n * l.out_channels * p..(n + 1) * l.out_channels * p];
        gemm(T::one(), wmat, MatRef::row_major(rhs, rows, p), T::zero(), yn);
    }
    Tensor::from_vec(&l.out_shape, out)
}

/// Gradient of [`conv_forward`] with respect to its input.
pub fn conv_backward_data<T: Real>(dy: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry, in_spatial: &[usize]) -> Result<Tensor<T>> {
    let d = geom.dims();
    let out = geom.conv_output(in_spatial)?;
    if dy.rank() != d + 2 || w.rank() != d + 2 || dy.shape()[1] != w.shape()[0] || dy.shape()[2..] != out[..] {
        return Err(Error::ShapeMismatch { op: "conv_backward_data", lhs: dy.shape().to_vec(), rhs: w.shape().to_vec() });
    }
    let g = geom.lift(in_spatial, &out);
    let (batch, out_channels, in_channels) = (dy.shape()[0], w.shape()[0], w.shape()[1]);
    let rows = in_channels * g.kernel_size();
    let p = g.out_size();
    let in_sz = in_channels * g.in_size();
    let mut dx = vec![T::zero(); batch * in_sz];
    let mut cols = vec![T::zero(); rows * p];
    let wt = MatRef::row_major(w.data(), out_channels, rows).t();
    for n in 0..batch {
        let dyn_ = MatRef::row_major(&dy.data()[n * out_channels * p..(n + 1) * out_channels * p], out_channels, p);
        let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
        if g.is_pointwise() {
            gemm(T::one(), wt, dyn_, T::zero(), dxn);
        } else {
            gemm(T::one(), wt, dyn_, T::zero(), &mut cols);
            col2im(&cols, in_channels, &g, dxn);
        }
    }
    let mut shape = vec![batch, in_channels];
    shape.extend_from_slice(in_spatial);
    Tensor::from_vec(&shape, dx)
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub fn conv_backward_weight<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, geom: &ConvGeometry, out_channels: usize) -> Result<Tensor<T>> {
    let d = geom.dims();
    if x.rank() != d + 2 {
        return Err(Error::ShapeMismatch { op: "conv_backward_weight", lhs: x.shape().to_vec(), rhs: dy.shape().to_vec() });
    }
    let spatial = &x.shape()[2..];
    let out = geom.conv_output(spatial)?;
    let mut expect = vec![x.shape()[0], out_channels];
    expect.extend_from_slice(&out);
    if dy.shape() != expect.as_slice() {
        return Err(Error::ShapeMismatch { op: "conv_backward_weight", lhs: dy.shape().to_vec(), rhs: expect });
    }
    let g = geom.lift(spatial, &out);
    let (batch, in_channels) = (x.shape()[0], x.shape()[1]);
    let rows = in_channels * g.kernel_size();
    let p = g.out_size();
    let in_sz = in_channels * g.in_size();
    let mut dw = vec![T::zero(); out_channels * rows];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
    for n in 0..batch {
        let xn = &x.data()[n * in_sz..(n + 1) * in_sz];
        let c = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, in_channels, &g, &mut cols);
            &cols
        };
        let dyn_ = MatRef::row_major(&dy.data()[n * out_channels * p..(n + 1) * out_channels * p], out_channels, p);
        let beta = if n == 0 { T::zero() } else { T::one() };
        gemm(T::one(), dyn_, MatRef::row_major(c, rows, p).t(), beta, &mut dw);
    }
    let mut shape = vec![out_channels, in_channels];
    shape.extend_from_slice(&geom.kernel);
    Tensor::from_vec(&shape, dw)
}

/// Exchange the two channel axes of a weight tensor.
pub fn swap_channel_axes<T: Real>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let mut perm: Vec<usize> = (0..w.rank()).collect();
    perm.swap(0, 1);
    w.permute(&perm)
}

/// Transposed convolution, no bias. `x: [N, C_in, S...]`,
/// `w: [C_out, C_in, K...]`, output spatial `(S−1)s − 2p + k`.
pub fn deconv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let d = geom.dims();
    if x.rank() != d + 2 || w.rank() != d + 2 || w.shape()[1] != x.shape()[1] || w.shape()[2..] != geom.kernel[..] {
        return Err(Error::ShapeMismatch { op: "deconv", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
    }
    let out = geom.deconv_output(&x.shape()[2..])?;
    if geom.conv_output(&out)? != x.shape()[2..] {
        return Err(Error::ShapeMismatch { op: "deconv", lhs: x.shape().to_vec(), rhs: out });
    }
    conv_backward_data(x, &swap_channel_axes(w)?, geom, &out)
}

/// Gradient of [`deconv_forward`] with respect to its input.
pub fn deconv_backward_data<T: Real>(dy: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    conv_forward(dy, &swap_channel_axes(w)?, geom)
}

/// Gradient of [`deconv_forward`] with respect to its weight.
pub fn deconv_backward_weight<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let swapped = conv_backward_weight(dy, x, geom, x.shape()[1])?;
    swap_channel_axes(&swapped)
}

//! Layer vocabulary: declarative specs, batch-norm state and eager forwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, BatchStats, Graph};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Deconv1d,
    Deconv2d,
    Deconv3d,
    Conv3d,
    Batchnorm,
    Relu,
    LeakyRelu,
    Tanh,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Deconv1d => "deconv1d",
            LayerKind::Deconv2d => "deconv2d",
            LayerKind::Deconv3d => "deconv3d",
            LayerKind::Conv3d => "conv3d",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::LeakyRelu => "leaky_relu",
            LayerKind::Tanh => "tanh",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => LayerKind::Linear,
            "deconv1d" => LayerKind::Deconv1d,
            "deconv2d" => LayerKind::Deconv2d,
            "deconv3d" => LayerKind::Deconv3d,
            "conv3d" => LayerKind::Conv3d,
            "batchnorm" => LayerKind::Batchnorm,
            "relu" => LayerKind::Relu,
            "leaky_relu" => LayerKind::LeakyRelu,
            "tanh" => LayerKind::Tanh,
            other => return Err(Error::UnknownLayerKind(other.into())),
        })
    }

    /// Number of spatial axes for convolutional kinds.
    pub fn spatial_dims(self) -> Option<usize> {
        match self {
            LayerKind::Deconv1d => Some(1),
            LayerKind::Deconv2d => Some(2),
            LayerKind::Deconv3d | LayerKind::Conv3d => Some(3),
            _ => None,
        }
    }

    pub fn is_transposed(self) -> bool {
        matches!(self, LayerKind::Deconv1d | LayerKind::Deconv2d | LayerKind::Deconv3d)
    }

    /// Kinds with a weight tensor.
    pub fn has_weight(self) -> bool {
        self == LayerKind::Linear || self.spatial_dims().is_some()
    }

    pub fn is_activation(self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::LeakyRelu | LayerKind::Tanh)
    }
}

/// Kernel extent: one value for every axis or one per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSize {
    Cubic(usize),
    PerAxis(Vec<usize>),
}

impl Default for KernelSize {
    fn default() -> Self {
        KernelSize::Cubic(1)
    }
}

/// One entry of a layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: KernelSize,
    pub out_channels: usize,
    pub padding: usize,
    pub stride: usize,
    /// Leaky ReLU negative slope `a`.
    pub slope: f64,
    /// Batch-norm ε.
    pub eps: f64,
    /// Batch-norm running statistics momentum (weight of the old value).
    pub momentum: f64,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            kind: LayerKind::Relu,
            kernel: KernelSize::Cubic(1),
            out_channels: 0,
            padding: 0,
            stride: 1,
            slope: 0.2,
            eps: 1e-5,
            momentum: 0.9,
        }
    }
}

impl LayerSpec {
    fn conv(kind: LayerKind, kernel: usize, out_channels: usize, padding: usize, stride: usize) -> Self {
        Self { kind, kernel: KernelSize::Cubic(kernel), out_channels, padding, stride, ..Self::default() }
    }

    /// `deconv (kernel, out_channels, padding, stride)` over time.
    pub fn deconv1d(kernel: usize, out_channels: usize, padding: usize, stride: usize) -> Self {
        Self::conv(LayerKind::Deconv1d, kernel, out_channels, padding, stride)
    }

    pub fn deconv2d(kernel: usize, out_channels: usize, padding: usize, stride: usize) -> Self {
        Self::conv(LayerKind::Deconv2d, kernel, out_channels, padding, stride)
    }

    pub fn deconv3d(kernel: usize, out_channels: usize, padding: usize, stride: usize) -> Self {
        Self::conv(LayerKind::Deconv3d, kernel, out_channels, padding, stride)
    }

    pub fn conv3d(kernel: usize, out_channels: usize, padding: usize, stride: usize) -> Self {
        Self::conv(LayerKind::Conv3d, kernel, out_channels, padding, stride)
    }

    pub fn linear(out_channels: usize) -> Self {
        Self { kind: LayerKind::Linear, out_channels, ..Self::default() }
    }

    pub fn batchnorm() -> Self {
        Self { kind: LayerKind::Batchnorm, ..Self::default() }
    }

    pub fn relu() -> Self {
        Self { kind: LayerKind::Relu, ..Self::default() }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Self { kind: LayerKind::LeakyRelu, slope, ..Self::default() }
    }

    pub fn tanh() -> Self {
        Self { kind: LayerKind::Tanh, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if let Some(d) = self.kind.spatial_dims() {
            let ks = self.kernel_per_axis(d)?;
            if ks.contains(&0) {
                return bad(format!("{}: kernel must be >= 1", self.kind.name()));
            }
            if self.stride == 0 {
                return bad(format!("{}: stride must be >= 1", self.kind.name()));
            }
        }
        if self.kind.has_weight() && self.out_channels == 0 {
            return bad(format!("{}: out_channels must be >= 1", self.kind.name()));
        }
        if self.kind == LayerKind::LeakyRelu && !(self.slope > 0.0 && self.slope <= 1.0) {
            return bad(format!("leaky_relu slope must be in (0, 1], got {}", self.slope));
        }
        if self.kind == LayerKind::Batchnorm {
            if !(self.eps > 0.0) {
                return bad(format!("batchnorm eps must be positive, got {}", self.eps));
            }
            if !(0.0..1.0).contains(&self.momentum) {
                return bad(format!("batchnorm momentum must be in [0, 1), got {}", self.momentum));
            }
        }
        Ok(())
    }

    pub fn kernel_per_axis(&self, dims: usize) -> Result<Vec<usize>> {
        match &self.kernel {
            KernelSize::Cubic(k) => Ok(vec![*k; dims]),
            KernelSize::PerAxis(ks) if ks.len() == dims => Ok(ks.clone()),
            KernelSize::PerAxis(ks) => {
                Err(Error::InvalidConfig(format!("{}: kernel has {} axes, expected {dims}", self.kind.name(), ks.len())))
            }
        }
    }

    pub fn geometry(&self) -> Result<Option<ConvGeometry>> {
        let Some(d) = self.kind.spatial_dims() else { return Ok(None) };
        Ok(Some(ConvGeometry { kernel: self.kernel_per_axis(d)?, stride: vec![self.stride; d], padding: vec![self.padding; d] }))
    }

    pub fn activation(&self) -> Option<Activation> {
        match self.kind {
            LayerKind::Relu => Some(Activation::Relu),
            LayerKind::LeakyRelu => Some(Activation::LeakyRelu(self.slope)),
            LayerKind::Tanh => Some(Activation::Tanh),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape `[C, S...]`
    /// (or `[F]` for linear layers, which flatten their input).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match self.kind {
            LayerKind::Linear => Ok(vec![self.out_channels]),
            k if k.spatial_dims().is_some() => {
                let d = k.spatial_dims().unwrap();
                if input.len() != d + 1 {
                    return Err(Error::InvalidConfig(format!("{} expects a [C, {d} spatial axes] input, got {input:?}", k.name())));
                }
                let geom = self.geometry()?.unwrap();
                let spatial = if k.is_transposed() { geom.deconv_output(&input[1..])? } else { geom.conv_output(&input[1..])? };
                let mut out = vec![self.out_channels];
                out.extend(spatial);
                Ok(out)
            }
            _ => Ok(input.to_vec()),
        }
    }

    /// Weight shape `[out, in, k...]` (or `[out, in]` for linear).
    pub fn weight_shape(&self, input: &[usize]) -> Result<Option<Vec<usize>>> {
        match self.kind {
            LayerKind::Linear => Ok(Some(vec![self.out_channels, input.iter().product()])),
            k if k.spatial_dims().is_some() => {
                let mut s = vec![self.out_channels, input[0]];
                s.extend(self.kernel_per_axis(k.spatial_dims().unwrap())?);
                Ok(Some(s))
            }
            _ => Ok(None),
        }
    }
}

/// Forward mode for batch normalization (and noise injection upstream).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch-norm parameters and running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    /// Running standard deviation σ_B.
    pub running_std: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BnState<T> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_std: Tensor::ones(&[channels])?,
            eps,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Exponential moving average toward the batch statistics.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.momentum);
        let rest = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + rest * b;
        }
        for (r, &b) in self.running_std.data_mut().iter_mut().zip(&stats.std) {
            *r = m * *r + rest * b;
        }
    }

    /// Slope `|γ_c| / sqrt(σ_c² + ε)` of the inference-mode map per channel.
    pub fn channel_slopes(&self) -> Vec<f64> {
        self.gamma
            .data()
            .iter()
            .zip(self.running_std.data())
            .map(|(&g, &s)| {
                let s = s.to_f64_lossy();
                num_traits::Float::abs(g.to_f64_lossy()) / num_traits::Float::sqrt(s * s + self.eps)
            })
            .collect()
    }

    /// Lipschitz constant of the inference-mode map.
    pub fn lipschitz(&self) -> f64 {
        self.channel_slopes().into_iter().fold(0.0, f64::max)
    }
}

/// `x·Wᵀ + b`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, w, b) = (g.constant_ref(x), g.constant_ref(w), g.constant_ref(b));
    let y = g.linear(x, w, Some(b))?;
    Ok(g.value(y)?.clone())
}

/// Transposed convolution over 1, 2 or 3 spatial axes.
pub fn deconv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    crate::conv::deconv_forward(x, w, geom)
}

/// Strided 3D convolution.
pub fn conv3d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    crate::conv::conv_forward(x, w, &ConvGeometry::cubic(3, kernel, stride, padding))
}

/// Batch normalization; train mode uses batch statistics and updates the
/// running ones.
pub fn batchnorm_forward<T: Real>(x: &Tensor<T>, state: &mut BnState<T>, mode: Mode) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.constant_ref(x);
    let gamma = g.constant(state.gamma.clone());
    let beta = g.constant(state.beta.clone());
    let y = match mode {
        Mode::Train => {
            let (y, stats) = g.batch_norm_train(xv, Some(gamma), beta, state.eps)?;
            state.update_running(&stats);
            y
        }
        Mode::Infer => g.batch_norm_infer(xv, Some(gamma), beta, state.running_mean.data(), state.running_std.data(), state.eps)?,
    };
    Ok(g.value(y)?.clone())
}

/// Elementwise activation of the given kind.
pub fn activation<T: Real>(x: &Tensor<T>, kind: LayerKind, slope: f64) -> Result<Tensor<T>> {
    let act = match kind {
        LayerKind::Relu => Activation::Relu,
        LayerKind::LeakyRelu => Activation::LeakyRelu(slope),
        LayerKind::Tanh => Activation::Tanh,
        other => return Err(Error::InvalidParameter(format!("{} is not an activation", other.name()))),
    };
    let mut g = Graph::new();
    let xv = g.constant_ref(x);
    let y = g.activation(xv, act)?;
    Ok(g.value(y)?.clone())
}

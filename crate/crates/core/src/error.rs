use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape must have at least one axis")]
    EmptyShape,
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("invalid range: low {low} exceeds high {high}")]
    InvalidRange { low: f64, high: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("{op}: non-positive output size for input {input}, kernel {kernel}, stride {stride}, padding {padding}")]
    NonPositiveOutput { op: &'static str, input: usize, kernel: usize, stride: usize, padding: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("root does not depend on any differentiable leaf")]
    DetachedTape,
    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("label {label} out of range for {categories} categories")]
    LabelOutOfRange { label: usize, categories: usize },
    #[error("model is unconditional (no categories configured)")]
    Unconditional,
    #[error("model is conditional and requires labels")]
    LabelsRequired,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at iteration {iter}: loss_d={loss_d}, loss_g={loss_g}")]
    Divergence { iter: u64, loss_d: f64, loss_g: f64 },
    #[error("non-discriminative critic: {0}")]
    Degenerate(String),
    #[error("not enough samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("shape of size {size} does not fit in a {resolution}x{resolution} patch")]
    ShapeTooLarge { size: usize, resolution: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl Error {
    /// Divergence and non-finite values are numerical failures; everything
    /// else is a usage or validation error.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite(_))
    }
}

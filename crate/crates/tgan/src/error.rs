use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reasons a TNSR file cannot be decoded.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TnsrError {
    #[error("bad magic {0:?}, expected \"TNSR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype byte {0}")]
    UnknownDType(u8),
    #[error("tensor has no dimensions")]
    EmptyDims,
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("dtype {found} where {expected} was required")]
    DTypeMismatch { expected: &'static str, found: &'static str },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tgan_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Tnsr { path: PathBuf, source: TnsrError },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    /// A self-check ran to completion and reported failures.
    #[error("{0}")]
    CheckFailed(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json { path: path.to_path_buf(), source }
    }

    pub fn manifest(path: &Path, message: impl Into<String>) -> Self {
        Error::Manifest { path: path.to_path_buf(), message: message.into() }
    }

    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_numerical() => 2,
            Error::CheckFailed(_) => 2,
            _ => 1,
        }
    }
}

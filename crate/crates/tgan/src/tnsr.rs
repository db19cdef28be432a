//! The TNSR tensor file: magic `TNSR`, u32 LE version 1, u8 dtype
//! (0 = f32, 1 = f64), u8 rank, rank × u32 LE extents, then the row-major
//! little-endian payload.

use std::any::Any;
use std::fs;
use std::io::Write;
use std::path::Path;

use tgan_core::{DType, Real, Tensor};

use crate::error::{Error, Result, TnsrError};

pub const MAGIC: [u8; 4] = *b"TNSR";
pub const VERSION: u32 = 1;

/// A decoded tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to `T`; bit patterns are kept when the stored dtype is `T`.
    pub fn cast<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) if T::DTYPE != DType::F32 => t.cast(),
            AnyTensor::F64(t) if T::DTYPE != DType::F64 => t.cast(),
            same => same.exact().expect("dtype matches"),
        }
    }

    /// Take the tensor only if it is stored as `T`.
    pub fn exact<T: Real>(self) -> Result<Tensor<T>, TnsrError> {
        let found = self.dtype().name();
        let any: Box<dyn Any> = match self {
            AnyTensor::F32(t) => Box::new(t),
            AnyTensor::F64(t) => Box::new(t),
        };
        any.downcast::<Tensor<T>>().map(|b| *b).map_err(|_| TnsrError::DTypeMismatch { expected: T::DTYPE.name(), found })
    }
}

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * t.rank() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.extend_le_bytes(&mut out);
    }
    out
}

fn take<'b>(bytes: &'b [u8], at: &mut usize, n: usize) -> Result<&'b [u8], TnsrError> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(TnsrError::Truncated { expected: end, found: bytes.len() });
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn payload<T: Real>(shape: &[usize], bytes: &[u8]) -> Tensor<T> {
    let data = bytes.chunks_exact(T::DTYPE.size()).map(T::from_le_slice).collect();
    Tensor::from_vec(shape, data).expect("extents were validated")
}

/// Header fields without the payload.
pub fn decode_header(bytes: &[u8]) -> Result<(DType, Vec<usize>, usize), TnsrError> {
    let mut at = 0;
    let magic: [u8; 4] = take(bytes, &mut at, 4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(TnsrError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(TnsrError::UnsupportedVersion(version));
    }
    let code = take(bytes, &mut at, 1)?[0];
    let dtype = DType::from_code(code).ok_or(TnsrError::UnknownDType(code))?;
    let rank = take(bytes, &mut at, 1)?[0] as usize;
    if rank == 0 {
        return Err(TnsrError::EmptyDims);
    }
    let shape: Vec<usize> =
        take(bytes, &mut at, 4 * rank)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    if shape.contains(&0) {
        return Err(TnsrError::ZeroExtent(shape));
    }
    Ok((dtype, shape, at))
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor, TnsrError> {
    let (dtype, shape, mut at) = decode_header(bytes)?;
    let n = shape.iter().try_fold(dtype.size(), |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
    let body = take(bytes, &mut at, n)?;
    if at != bytes.len() {
        return Err(TnsrError::TrailingBytes(bytes.len() - at));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(payload(&shape, body)),
        DType::F64 => AnyTensor::F64(payload(&shape, body)),
    })
}

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_tensor<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode(t))
}

pub fn load_any(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Tnsr { path: path.to_path_buf(), source })
}

/// Load and convert to `T`.
pub fn load_tensor<T: Real>(path: &Path) -> Result<Tensor<T>> {
    Ok(load_any(path)?.cast())
}

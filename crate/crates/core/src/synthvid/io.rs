//! `.muvt` tensor container.
//!
//! Layout (all integers little-endian):
//! `"MUVT"` | version u16 | dtype u8 (0 = f64, 1 = f32) | ndim u8 |
//! ndim × u64 extents | row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MUVT";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("unknown dtype code {0}")]
    BadDType(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("refusing to write non-finite values")]
    NonFinite,
    #[error("shape {0:?} does not match {1} values")]
    Shape(Vec<usize>, usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn header(shape: &[usize], dtype: DType) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 8 * shape.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(dtype as u8);
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf
}

/// Byte length of the header for a tensor of rank `ndim`.
pub fn header_len(ndim: usize) -> usize {
    8 + 8 * ndim
}

/// Serialize f64 values, optionally narrowing to f32.
pub fn encode(shape: &[usize], data: &[f64], dtype: DType) -> Result<Vec<u8>, TensorFileError> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(TensorFileError::Shape(shape.to_vec(), data.len()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorFileError::NonFinite);
    }
    let mut buf = header(shape, dtype);
    buf.reserve(data.len() * dtype.width());
    match dtype {
        DType::F64 => data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => data
            .iter()
            .for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    Ok(buf)
}

/// Serialize f32 values directly (no widening round trip).
pub fn encode_f32(shape: &[usize], data: &[f32]) -> Result<Vec<u8>, TensorFileError> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(TensorFileError::Shape(shape.to_vec(), data.len()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorFileError::NonFinite);
    }
    let mut buf = header(shape, DType::F32);
    buf.reserve(data.len() * 4);
    data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    Ok(buf)
}

/// Parsed file contents before conversion.
#[derive(Debug)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    payload: Vec<u8>,
}

impl RawTensor {
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F64 => self
                .payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self.dtype {
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F64 => self.to_f64().into_iter().map(|v| v as f32).collect(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawTensor, TensorFileError> {
    if bytes.len() < 4 {
        return Err(TensorFileError::TruncatedHeader);
    }
    if &bytes[..4] != MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(TensorFileError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TensorFileError::BadVersion(version));
    }
    let dtype = match bytes[6] {
        0 => DType::F64,
        1 => DType::F32,
        other => return Err(TensorFileError::BadDType(other)),
    };
    let ndim = bytes[7] as usize;
    let hl = header_len(ndim);
    if bytes.len() < hl {
        return Err(TensorFileError::TruncatedHeader);
    }
    let shape: Vec<usize> = bytes[8..hl]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected = shape.iter().product::<usize>() * dtype.width();
    let found = bytes.len() - hl;
    if found < expected {
        return Err(TensorFileError::TruncatedPayload { expected, found });
    }
    Ok(RawTensor {
        shape,
        dtype,
        payload: bytes[hl..hl + expected].to_vec(),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorFileError + '_ {
    move |source| TensorFileError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), TensorFileError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

pub fn write_tensor_file(path: &Path, t: &Tensor, dtype: DType) -> Result<(), TensorFileError> {
    write_bytes(path, &encode(t.shape(), t.data(), dtype)?)
}

pub fn read_raw(path: &Path) -> Result<RawTensor, TensorFileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor, TensorFileError> {
    let raw = read_raw(path)?;
    let data = raw.to_f64();
    Tensor::new(raw.shape.clone(), data).map_err(|_| TensorFileError::Shape(raw.shape, 0))
}

//! `MDT1` binary tensor format.
//!
//! Layout: magic `MDT1`, `u32` rank, `rank` x `u32` extents, `u8` dtype code,
//! then the values little-endian in row-major order. All integers are
//! little-endian.

use std::io::{Read, Write};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"MDT1";
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A shape plus untyped payload, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, payload: Payload) -> Result<Self> {
        if numel_of(&shape) != payload.len() {
            return Err(TensorError::Dimension(format!(
                "shape {shape:?} does not hold {} values",
                payload.len()
            )));
        }
        Ok(RawTensor { shape, payload })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("extent {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[self.payload.dtype() as u8])?;
        match &self.payload {
            Payload::F32(v) => w.write_all(&f32::to_le_bytes_vec(v))?,
            Payload::F64(v) => w.write_all(&f64::to_le_bytes_vec(v))?,
            Payload::U8(v) => w.write_all(v)?,
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(TensorError::Format(format!("bad tensor magic {magic:?}")));
        }
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(TensorError::Format(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let mut code = [0u8; 1];
        read_exact(r, &mut code)?;
        let dtype = DType::from_code(code[0]).ok_or_else(|| TensorError::Format(format!("unknown dtype code {}", code[0])))?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(dtype.size_of()))
            .ok_or_else(|| TensorError::Format(format!("shape {shape:?} overflows")))?;
        let mut bytes = Vec::new();
        r.take(count as u64).read_to_end(&mut bytes)?;
        if bytes.len() != count {
            return Err(TensorError::Format(format!("truncated payload: {} of {count} bytes", bytes.len())));
        }
        let payload = match dtype {
            DType::F32 => Payload::F32(bytes.chunks_exact(4).map(f32::from_le_chunk).collect()),
            DType::F64 => Payload::F64(bytes.chunks_exact(8).map(f64::from_le_chunk).collect()),
            DType::U8 => Payload::U8(bytes),
        };
        Ok(RawTensor { shape, payload })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Format("truncated tensor header".into()),
        _ => TensorError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl<T: Element> Tensor<T> {
    pub fn to_raw(&self) -> RawTensor {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(self.values().iter().map(|v| v.as_f64() as f32).collect()),
            _ => Payload::F64(self.to_f64_vec()),
        };
        RawTensor {
            shape: self.shape().to_vec(),
            payload,
        }
    }

    /// Rebuilds a tensor from a float payload of the same dtype.
    pub fn from_raw(raw: &RawTensor) -> Result<Self> {
        if raw.payload.dtype() != T::DTYPE {
            return Err(TensorError::Format(format!(
                "expected dtype {:?}, found {:?}",
                T::DTYPE,
                raw.payload.dtype()
            )));
        }
        let data: Vec<T> = match &raw.payload {
            Payload::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            Payload::U8(_) => unreachable!("dtype checked above"),
        };
        if raw.shape.is_empty() {
            return Ok(Tensor::scalar(data[0]));
        }
        Tensor::from_vec(&raw.shape, data)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.to_raw().write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        Self::from_raw(&RawTensor::read_from(r)?)
    }
}

//! TNSR file format.
//!
//! Layout, all integers little-endian:
//! magic `"TNSR"`, `u8` version (1), `u8` dtype (0 = f32, 1 = f64),
//! `u8` rank, rank x `u32` dims, then the data row-major.
//!
//! Used for images, weights and attention-map dumps; round trips are
//! bit-exact for a matching dtype.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 1;

pub fn write_tensor_to<T: Scalar, W: Write>(t: &Tensor<T>, mut w: W) -> Result<()> {
    let mut header = Vec::with_capacity(7 + 4 * t.shape().len());
    header.extend_from_slice(MAGIC);
    header.push(VERSION);
    header.push(T::DTYPE);
    if t.shape().len() > u8::MAX as usize {
        return Err(TensorError::arg("shape", "rank exceeds 255"));
    }
    header.push(t.shape().len() as u8);
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return Err(TensorError::arg("shape", "dimension exceeds u32::MAX"));
        }
        header.extend_from_slice(&(d as u32).to_le_bytes());
    }
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(t.numel() * T::BYTES);
    for &v in t.data() {
        v.write_le(&mut body);
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_tensor_from<T: Scalar, R: Read>(mut r: R) -> Result<Tensor<T>> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|_| TensorError::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(TensorError::Format(format!(
            "unsupported version {}",
            head[4]
        )));
    }
    if head[5] != T::DTYPE {
        return Err(TensorError::Format(format!(
            "dtype mismatch: file has {}, reader expects {}",
            head[5],
            T::DTYPE
        )));
    }
    let rank = head[6] as usize;
    let mut dims = vec![0u8; rank * 4];
    r.read_exact(&mut dims)
        .map_err(|_| TensorError::Format("truncated dims".into()))?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = numel(&shape);
    let mut body = vec![0u8; n * T::BYTES];
    r.read_exact(&mut body)
        .map_err(|_| TensorError::Format("truncated data".into()))?;
    let data: Vec<T> = body.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn write_tensor<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    write_tensor_to(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let f = File::open(path)?;
    read_tensor_from(BufReader::new(f))
}

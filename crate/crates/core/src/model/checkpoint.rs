//! Binary checkpoints: `COLACTC\0`, a `u32` format version, a `u64` header
//! length, a JSON header, then every tensor as little-endian floats in
//! header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{ModelDims, TrainConfig};
use crate::model::params::ModelParams;
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

pub const MAGIC: &[u8; 8] = b"COLACTC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: ModelDims,
    dtype: String,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, config: &TrainConfig, params: &ModelParams<T>) -> Result<()> {
    let path = path.as_ref();
    let tensors = params.tensors();
    let header = Header {
        config: config.clone(),
        dims: params.dims,
        dtype: T::DTYPE.into(),
        seed: config.seed,
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 20 + params.count_params() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &tensors {
        for &x in m.as_slice() {
            x.write_le(&mut out);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_blob<S: Scalar, T: Scalar>(bytes: &[u8], n: usize) -> Vec<T> {
    bytes[..n * S::BYTES]
        .chunks_exact(S::BYTES)
        .map(|c| T::of(S::read_le(c).as_f64()))
        .collect()
}

/// Loads a checkpoint, converting stored floats to `T` when the widths differ.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start]).map_err(|e| bad(&format!("header: {e}")))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(&format!("unknown dtype {other:?}"))),
    };
    let mut params = ModelParams::<T>::init(header.dims, &mut Rng::new(0));
    let layout: Vec<(String, usize, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.rows(), m.cols()))
        .collect();
    let stored: Vec<(String, usize, usize)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.rows, t.cols))
        .collect();
    if layout != stored {
        return Err(bad("tensor layout does not match the recorded model shape"));
    }
    let total: usize = layout.iter().map(|(_, r, c)| r * c).sum();
    if bytes.len() - body_start != total * width {
        return Err(bad("parameter data has the wrong length"));
    }
    let mut offset = body_start;
    for (dst, (_, rows, cols)) in params.tensors_mut().into_iter().zip(&layout) {
        let n = rows * cols;
        let data = if width == 4 {
            read_blob::<f32, T>(&bytes[offset..], n)
        } else {
            read_blob::<f64, T>(&bytes[offset..], n)
        };
        *dst = Matrix::from_vec(*rows, *cols, data);
        offset += n * width;
    }
    Ok(Checkpoint {
        config: header.config,
        params,
    })
}

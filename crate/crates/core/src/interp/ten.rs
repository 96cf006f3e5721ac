//! `.ten` tensor files.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic  "TEN1"          4 bytes
//! dtype  u8              0 = f16, 1 = f32, 2 = i32
//! rank   u8
//! pad    u16             zero
//! dims   u64 x rank
//! data   raw elements, row-major
//! ```
//!
//! The text form is meant for tiny hand-written fixtures: a header line such
//! as `f32 [2, 3]` followed by whitespace-separated values.

use std::fs;
use std::path::Path;

use half::f16;
use thiserror::Error;

use super::tensor::{numel, Tensor};
use crate::sketch::Dtype;

pub const MAGIC: &[u8; 4] = b"TEN1";

#[derive(Debug, Error)]
pub enum TenError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a .ten file (bad magic)")]
    BadMagic,
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("text tensor: {0}")]
    Text(String),
}

fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::F16 => 0,
        Dtype::F32 => 1,
        Dtype::I32 => 2,
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.shape.len() + t.numel() * t.dtype.size_bytes());
    out.extend_from_slice(MAGIC);
    out.push(dtype_code(t.dtype));
    out.push(t.shape.len() as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        match t.dtype {
            Dtype::F16 => out.extend_from_slice(&f16::from_f64(x).to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::I32 => out.extend_from_slice(&(x as i32).to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, TenError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(TenError::Truncated { expected, found: bytes.len() })
        } else {
            Ok(())
        }
    };
    need(8)?;
    if &bytes[..4] != MAGIC {
        return Err(TenError::BadMagic);
    }
    let dtype = match bytes[4] {
        0 => Dtype::F16,
        1 => Dtype::F32,
        2 => Dtype::I32,
        c => return Err(TenError::BadDtype(c)),
    };
    let rank = bytes[5] as usize;
    need(8 + 8 * rank)?;
    let shape: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 8 + 8 * i;
            u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize
        })
        .collect();
    let n = numel(&shape);
    let start = 8 + 8 * rank;
    let sz = dtype.size_bytes();
    need(start + n * sz)?;
    let body = &bytes[start..start + n * sz];
    let data = body
        .chunks_exact(sz)
        .map(|c| match dtype {
            Dtype::F16 => f16::from_le_bytes([c[0], c[1]]).to_f64(),
            Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Dtype::I32 => i32::from_le_bytes(c.try_into().unwrap()) as f64,
        })
        .collect();
    Ok(Tensor { dtype, shape, data })
}

pub fn write_ten(path: &Path, t: &Tensor) -> Result<(), TenError> {
    fs::write(path, encode(t)).map_err(|source| TenError::Io { path: path.display().to_string(), source })
}

pub fn read_ten(path: &Path) -> Result<Tensor, TenError> {
    let bytes = fs::read(path).map_err(|source| TenError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

/// Parses the text form, e.g. `"f32 [2, 2]\n1 2\n3 4"`.
pub fn parse_text(src: &str) -> Result<Tensor, TenError> {
    let err = |m: &str| TenError::Text(m.to_string());
    let src = src.trim_start();
    let (header, rest) = src.split_once('\n').unwrap_or((src, ""));
    let (dt, dims) = header.trim().split_once(char::is_whitespace).ok_or_else(|| err("missing shape"))?;
    let dtype = Dtype::parse(dt).ok_or_else(|| err("unknown dtype"))?;
    let dims = dims.trim().strip_prefix('[').and_then(|d| d.strip_suffix(']')).ok_or_else(|| err("shape must be `[d0, d1, ...]`"))?;
    let shape = dims
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| err("bad dimension")))
        .collect::<Result<Vec<_>, _>>()?;
    let data = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| TenError::Text(format!("bad value `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let found = data.len();
    Tensor::new(dtype, shape, data).ok_or_else(|| TenError::Text(format!("value count {found} does not match shape")))
}

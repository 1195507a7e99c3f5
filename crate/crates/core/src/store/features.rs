use std::path::Path;

use super::{atomic_write, read_bytes};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"DUSTFEA1";
const HEADER: usize = 16;

/// `DUSTFEA1 | u32 T | u32 d | T·d f32`, little-endian, row-major.
pub fn encode_features(frames: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + frames.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for v in frames.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a feature file; `path` only labels errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix<f32>> {
    if bytes.len() < HEADER {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected DUSTFEA1"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(Error::format(path, 12, "frame dimension is zero"));
    }
    let expected = HEADER + t * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            bytes.len().min(expected) as u64,
            format!(
                "payload holds {} bytes, header declares {t}x{d} frames ({expected} total)",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(t, d, data)
}

pub fn write_features(path: &Path, frames: &Matrix<f32>) -> Result<()> {
    atomic_write(path, &encode_features(frames))
}

pub fn read_features(path: &Path) -> Result<Matrix<f32>> {
    decode_features(&read_bytes(path)?, path)
}

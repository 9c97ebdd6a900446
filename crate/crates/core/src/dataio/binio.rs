use std::path::Path;

use crate::error::{Error, Result};

pub fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads little-endian `f32`s; `expected` (if given) is the exact count.
pub fn read_f32_le(path: &Path, expected: Option<usize>) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::data(path, format!("size {} is not a multiple of 4 bytes", bytes.len())));
    }
    let n = bytes.len() / 4;
    if let Some(want) = expected {
        if n != want {
            return Err(Error::data(path, format!("expected {want} float32 values, found {n}")));
        }
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    std::fs::write(path, values).map_err(|e| Error::io(path, e))
}

pub fn read_u8(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::data(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    Ok(bytes)
}

//! `.f64m` binary matrices: little-endian `u64` rows, `u64` cols, then
//! `rows × cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{GshError, Result};

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.as_slice().len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 16 {
        return Err(format!("{} bytes is shorter than the 16-byte header", bytes.len()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let rows = word(0) as usize;
    let cols = word(8) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16))
        .ok_or("header dimensions overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "header says {rows}x{cols} ({expected} bytes) but file has {} bytes",
            bytes.len()
        ));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut f = fs::File::open(path).map_err(|e| GshError::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    decode(&buf).map_err(|detail| GshError::Format {
        path: path.to_path_buf(),
        detail,
    })
}

//! Binary matrix fixtures: little-endian header `rows: u32, cols: u32,
//! width: u8`, then the row-major payload. Plus a plain CSV loader.

use std::path::Path;

use lora_serve_core::{Matrix, Scalar};

use super::{write_file, IoError};

const HEADER: usize = 9;

pub fn encode<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + m.as_slice().len() * T::WIDTH);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.push(T::WIDTH as u8);
    for &v in m.as_slice() {
        let bits = v.to_bits_u64().to_le_bytes();
        out.extend_from_slice(&bits[..T::WIDTH]);
    }
    out
}

/// Decodes a fixture. A 4-byte payload may be read as `f64` (exact
/// widening); narrowing an 8-byte payload to `f32` is refused.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Matrix<T>, String> {
    if bytes.len() < HEADER {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = bytes[8] as usize;
    if width != 4 && width != 8 {
        return Err(format!("unsupported scalar width {width}"));
    }
    if width > T::WIDTH {
        return Err(format!("stored width {width} cannot be read as width {}", T::WIDTH));
    }
    let payload = &bytes[HEADER..];
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(width)).ok_or("dimensions overflow")?;
    if payload.len() != expected {
        return Err(format!("payload is {} bytes, header implies {expected}", payload.len()));
    }
    let data = payload
        .chunks_exact(width)
        .map(|c| match width {
            4 => T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64),
            _ => T::from_f64(f64::from_le_bytes(c.try_into().unwrap())),
        })
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_matrix<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<(), IoError> {
    write_file(path, &encode(m))
}

pub fn read_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes).map_err(|msg| IoError::format(path, msg))
}

/// Loads a small matrix from comma-separated rows. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<Matrix<T>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| IoError::Parse { path: path.to_path_buf(), line: i as u64 + 1, msg };
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map(T::from_f64).map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<T>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| IoError::format(path, e))
}

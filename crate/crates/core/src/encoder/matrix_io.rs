//! `SPKE` matrix files: the 4-byte magic `SPKE`, a little-endian `u32`
//! version, `u64` rows, `u64` cols, then `rows * cols` little-endian `f32`
//! values in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SPKE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixIoError {
    #[error("file is truncated")]
    Truncated,
    #[error("header declares {rows}x{cols} but payload holds {values} values")]
    HeaderMismatch { rows: u64, cols: u64, values: u64 },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("io: {0}")]
    Io(String),
}

/// A dense row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix payload size");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn encode(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an `SPKE` buffer. A payload whose length is not a whole number of
/// floats is `Truncated`; a whole number of floats that disagrees with the
/// header is `HeaderMismatch`.
pub fn decode(bytes: &[u8]) -> Result<DenseMatrix, MatrixIoError> {
    if bytes.len() < 4 {
        return Err(MatrixIoError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(MatrixIoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(MatrixIoError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(MatrixIoError::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 4 != 0 {
        return Err(MatrixIoError::Truncated);
    }
    let values = (payload.len() / 4) as u64;
    if rows.checked_mul(cols) != Some(values) {
        return Err(MatrixIoError::HeaderMismatch { rows, cols, values });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseMatrix {
        rows: rows as usize,
        cols: cols as usize,
        data,
    })
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), MatrixIoError> {
    fs::write(path, encode(m)).map_err(|e| MatrixIoError::Io(format!("{}: {e}", path.display())))
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix, MatrixIoError> {
    let bytes =
        fs::read(path).map_err(|e| MatrixIoError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Companion index: one label per line, in row order.
pub fn write_index(path: &Path, labels: &[String]) -> Result<(), MatrixIoError> {
    let mut f = fs::File::create(path)
        .map_err(|e| MatrixIoError::Io(format!("{}: {e}", path.display())))?;
    for l in labels {
        writeln!(f, "{l}").map_err(|e| MatrixIoError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_index(path: &Path) -> Result<Vec<String>, MatrixIoError> {
    let f =
        fs::File::open(path).map_err(|e| MatrixIoError::Io(format!("{}: {e}", path.display())))?;
    BufReader::new(f)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| MatrixIoError::Io(e.to_string()))
}

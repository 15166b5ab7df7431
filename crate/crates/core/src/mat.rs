//! Binary matrix dump/ingest format shared by descriptor dumps and
//! file-backed predictors.
//!
//! Layout: magic `RM3DMAT1` (8 bytes), u64 rows, u64 cols, then rows*cols
//! little-endian f32 values, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RM3DMAT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub values: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(m.rows as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.cols as u64).to_le_bytes()).map_err(io)?;
    for v in &m.values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::parse(path, 0, "bad matrix magic"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut values = vec![0f32; rows * cols];
    let mut buf = [0u8; 4];
    for v in values.iter_mut() {
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *v = f32::from_le_bytes(buf);
    }
    Matrix::new(rows, cols, values)
}

//! Matrix and vector export.
//!
//! Binary matrix layout (all little-endian):
//!
//! ```text
//! offset 0   8 bytes  magic "CVMATF64"
//! offset 8   u64      rows
//! offset 16  u64      cols
//! offset 24  rows*cols entries in column-major order, each (re: f64, im: f64)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{CMatrix, Error, Result, C64};

pub const MATRIX_MAGIC: &[u8; 8] = b"CVMATF64";

pub fn encode_matrix(m: &CMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 16 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for z in m.iter() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<CMatrix> {
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::Parse("missing matrix header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Parse("matrix size overflows".into()))?;
    if bytes.len() != 24 + 16 * n {
        return Err(Error::Parse(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            16 * n,
            bytes.len() - 24
        )));
    }
    let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    Ok(CMatrix::from_iterator(
        rows,
        cols,
        (0..n).map(|i| C64::new(f(24 + 16 * i), f(32 + 16 * i))),
    ))
}

pub fn write_matrix_bin(path: &Path, m: &CMatrix) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_bin(path: &Path) -> Result<CMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

fn complex_cell(z: C64) -> String {
    if z.im.is_sign_negative() {
        format!("{:e}-{:e}i", z.re, -z.im)
    } else {
        format!("{:e}+{:e}i", z.re, z.im)
    }
}

/// One line per matrix row, entries written as `re+imi`.
pub fn matrix_to_csv(m: &CMatrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|z| complex_cell(*z)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Fixed-point decimal with `sig` significant digits.
pub fn decimal(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", sig.saturating_sub(1), if x.is_finite() { 0.0 } else { x });
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `index,value` CSV of an activity estimate.
pub fn gamma_to_csv(gamma: &[f64]) -> String {
    let mut out = String::from("index,value\n");
    for (k, g) in gamma.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", decimal(*g, 12)));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

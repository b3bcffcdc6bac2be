//! Plain-text matrix format: a `rows cols` header line followed by one line
//! per row of space-separated values, 17 significant digits, LF endings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stiefel_lora_core::Matrix;

use crate::error::{CliError, Result};

/// Shortest scientific form carrying 17 significant digits; parses back to
/// the identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_text(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        for (j, x) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> std::result::Result<Matrix, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty matrix file")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("bad header {header:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err(format!("header must be `rows cols`, got {header:?}"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| format!("missing row {i} of {rows}"))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|e| format!("row {i}: bad value {tok:?}: {e}"))?;
            if !x.is_finite() {
                return Err(format!("row {i}: non-finite value {tok:?}"));
            }
            data.push(x);
        }
        if data.len() - before != cols {
            return Err(format!("row {i} has {} values, expected {cols}", data.len() - before));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(format!("trailing data after {rows} rows"));
    }
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, to_text(m)).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|msg| CliError::format(path, msg))
}

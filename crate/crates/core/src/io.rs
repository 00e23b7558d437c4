//! Plain-text exchange formats.
//!
//! Tensor files: first line `n m S`, then `n*m*S` whitespace separated reals
//! in `(i, j, k) -> i + j*n + k*n*m` order. Matrix files: CSV, one line per
//! matrix row, no header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor3::Tensor3;

pub fn parse_tensor(text: &str) -> Result<Tensor3> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("tensor header is missing `{name}`")))?;
        tok.parse::<usize>()
            .map_err(|_| Error::Parse(format!("tensor header `{name}` is not a positive integer: {tok:?}")))
    };
    let n = dim("n")?;
    let m = dim("m")?;
    let s = dim("S")?;
    let data = tokens
        .enumerate()
        .map(|(idx, tok)| {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("tensor entry {idx} is not a real number: {tok:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_vec((n, m, s), data)
}

pub fn format_tensor(t: &Tensor3) -> String {
    let (n, m, s) = t.dims();
    let mut out = format!("{n} {m} {s}\n");
    for chunk in t.data().chunks(n * m) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    parse_tensor(&fs::read_to_string(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor3) -> Result<()> {
    fs::write(path, format_tensor(t))?;
    Ok(())
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("line {}: not a real number: {:?}", lineno + 1, tok.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("matrix file is empty".into()));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix_csv(m))?;
    Ok(())
}

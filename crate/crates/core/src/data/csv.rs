//! Comma-separated numeric tables.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn fmt_err(origin: &str, detail: String) -> Error {
    Error::Format { path: origin.to_string(), detail }
}

/// Parses uniform-arity numeric rows. Blank lines are skipped.
pub fn parse_matrix(text: &str, origin: &str) -> Result<Tensor> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for (col, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                fmt_err(origin, format!("line {}, column {}: not a number: {cell:?}", line_no + 1, col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: rows, col });
            }
            values.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(fmt_err(origin, format!("line {}: ragged row with {n} cells, expected {c}", line_no + 1)))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| fmt_err(origin, "no rows".into()))?;
    Tensor::from_vec(rows, cols, values)
}

/// One non-negative integer class id per line.
pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .parse()
            .map_err(|_| fmt_err(origin, format!("line {}: not a class id: {line:?}", line_no + 1)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(fmt_err(origin, "no rows".into()));
    }
    Ok(out)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

pub fn write_matrix(t: &Tensor) -> String {
    let mut s = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{}", *v as f32)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

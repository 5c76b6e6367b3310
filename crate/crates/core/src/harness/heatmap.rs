use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;

use super::{HarnessError, Result};

/// Binary 8-bit graymap, one pixel per entry, `round(v · 255)`.
pub fn encode_pgm(matrix: ArrayView2<f64>) -> Result<Vec<u8>> {
    if matrix.is_empty() {
        return Err(HarnessError::Argument("cannot render an empty matrix".into()));
    }
    if let Some(v) = matrix.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(HarnessError::Argument(format!("heatmap entries must lie in [0, 1], found {v}")));
    }
    let (rows, cols) = matrix.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(matrix.iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

/// Writes `path` as a graymap and a side-car CSV next to it with the same
/// stem. The CSV header names column indices. Returns the CSV path.
pub fn emit_heatmap(matrix: ArrayView2<f64>, path: &Path) -> Result<PathBuf> {
    emit_heatmap_with_axis(matrix, None, path)
}

/// As [`emit_heatmap`], with grid coordinates in the CSV: the header row
/// holds the column coordinates and each row starts with its own coordinate.
pub fn emit_heatmap_with_axis(matrix: ArrayView2<f64>, axis: Option<&[f64]>, path: &Path) -> Result<PathBuf> {
    let (rows, cols) = matrix.dim();
    if let Some(a) = axis {
        if a.len() != rows || a.len() != cols {
            return Err(HarnessError::Argument(format!(
                "axis has {} coordinates for a {rows}x{cols} grid",
                a.len()
            )));
        }
    }
    let pgm = encode_pgm(matrix)?;
    fs::write(path, pgm).map_err(|e| HarnessError::io(path, e))?;

    let label = |i: usize| axis.map_or(i.to_string(), |a| a[i].to_string());
    let mut csv = String::from(if axis.is_some() { "y\\x" } else { "row" });
    for j in 0..cols {
        write!(csv, ",{}", label(j)).expect("string write");
    }
    csv.push('\n');
    for (i, row) in matrix.rows().into_iter().enumerate() {
        csv.push_str(&label(i));
        for v in row {
            write!(csv, ",{v}").expect("string write");
        }
        csv.push('\n');
    }
    let side = path.with_extension("csv");
    fs::write(&side, csv).map_err(|e| HarnessError::io(&side, e))?;
    Ok(side)
}

//! CSV matrices: comma separated, row-major, optional header row.
//!
//! A header is detected when the first record contains a cell that is
//! neither numeric nor a missing marker (empty or `NaN`).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Dense grid where missing cells are `None`.
pub fn read_grid(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let csv_err = |line: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if idx == 0 && record.iter().any(|c| !is_missing(c) && parse_cell(c).is_none()) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            if is_missing(cell) {
                row.push(None);
            } else {
                let v = parse_cell(cell).ok_or_else(|| {
                    csv_err(line, format!("non-numeric cell `{cell}` in column {}", col + 1))
                })?;
                if !v.is_finite() {
                    return Err(csv_err(line, format!("non-finite cell `{cell}`")));
                }
                row.push(Some(v));
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(csv_err(
                    line,
                    format!("ragged row: {} cells, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(csv_err(0, "no data rows".into()));
    }
    Ok(rows)
}

/// Fully-observed numeric matrix; missing cells are an error.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let grid = read_grid(path)?;
    let (n, t) = (grid.len(), grid[0].len());
    let mut out = Array2::zeros((n, t));
    for (i, row) in grid.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            out[[i, j]] = cell.ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("missing value in column {}", j + 1),
            })?;
        }
    }
    Ok(out)
}

/// Write with full round-trip precision.
pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    write_cells(path, m, None)
}

/// Like [`write_matrix`], leaving cells empty where `mask` is zero.
pub fn write_masked(path: &Path, m: ArrayView2<f64>, mask: ArrayView2<f64>) -> Result<()> {
    if m.dim() != mask.dim() {
        return Err(Error::shape("matrix vs mask", m.dim(), mask.dim()));
    }
    write_cells(path, m, Some(mask))
}

fn write_cells(path: &Path, m: ArrayView2<f64>, mask: Option<ArrayView2<f64>>) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    for (i, row) in m.rows().into_iter().enumerate() {
        let line = row
            .iter()
            .enumerate()
            .map(|(j, v)| match mask {
                Some(k) if k[[i, j]] == 0.0 => String::new(),
                _ => format!("{v:?}"),
            })
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "{line}").map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

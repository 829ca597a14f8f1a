//! Core data containers and CSV ingestion.
//!
//! A [`Dataset`] couples the covariate matrix with an explicit missingness
//! mask. Masked cells never hold a meaningful value: all access goes through
//! [`Dataset::value`], which returns `None` for them, so downstream code
//! cannot accidentally do arithmetic on a missing entry. The response is
//! always fully observed.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major boolean missingness mask; `true` means the cell is missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingMask {
    nrows: usize,
    ncols: usize,
    cells: Vec<bool>,
}

impl MissingMask {
    pub fn none(nrows: usize, ncols: usize) -> Self {
        MissingMask {
            nrows,
            ncols,
            cells: vec![false; nrows * ncols],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.ncols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, missing: bool) {
        self.cells[row * self.ncols + col] = missing;
    }

    /// Total number of masked cells.
    pub fn count_missing(&self) -> usize {
        self.cells.iter().filter(|&&m| m).count()
    }

    /// Fraction of masked cells over the whole matrix.
    pub fn missing_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.count_missing() as f64 / self.cells.len() as f64
        }
    }

    pub fn any_missing(&self) -> bool {
        self.cells.iter().any(|&m| m)
    }
}

/// An incomplete regression dataset: covariates, fully observed response and
/// missingness mask. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    mask: MissingMask,
    column_names: Vec<String>,
    response_name: String,
}

impl Dataset {
    /// Builds and validates a dataset. Masked cells of `x` are ignored (and
    /// overwritten with NaN so stale values cannot leak).
    pub fn new(
        mut x: DMatrix<f64>,
        y: DVector<f64>,
        mask: MissingMask,
        column_names: Vec<String>,
        response_name: impl Into<String>,
    ) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n < 1 || p < 1 {
            return Err(Error::validation(format!(
                "dataset must have at least one row and one covariate (got {n}x{p})"
            )));
        }
        if y.len() != n {
            return Err(Error::validation(format!(
                "response length {} does not match row count {n}",
                y.len()
            )));
        }
        if mask.nrows() != n || mask.ncols() != p {
            return Err(Error::validation(format!(
                "mask is {}x{} but covariates are {n}x{p}",
                mask.nrows(),
                mask.ncols()
            )));
        }
        if column_names.len() != p {
            return Err(Error::validation(format!(
                "{} column names for {p} covariates",
                column_names.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "response contains a non-finite or missing value",
            ));
        }
        for j in 0..p {
            let mut observed = 0usize;
            for i in 0..n {
                if mask.is_missing(i, j) {
                    x[(i, j)] = f64::NAN;
                } else {
                    if !x[(i, j)].is_finite() {
                        return Err(Error::validation(format!(
                            "non-finite covariate value at row {}, column {}",
                            i + 1,
                            column_names[j]
                        )));
                    }
                    observed += 1;
                }
            }
            if observed == 0 {
                return Err(Error::validation(format!(
                    "column {} has no observed values",
                    column_names[j]
                )));
            }
        }
        Ok(Dataset {
            x,
            y,
            mask,
            column_names,
            response_name: response_name.into(),
        })
    }

    /// Convenience constructor for complete data.
    pub fn complete(x: DMatrix<f64>, y: DVector<f64>, column_names: Vec<String>) -> Result<Self> {
        let mask = MissingMask::none(x.nrows(), x.ncols());
        Dataset::new(x, y, mask, column_names, "y")
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Observed covariate value, `None` when masked.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        if self.mask.is_missing(row, col) {
            None
        } else {
            Some(self.x[(row, col)])
        }
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn mask(&self) -> &MissingMask {
        &self.mask
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Extracts the given columns (and all rows) together with the matching
    /// sub-mask. Masked cells hold NaN in the returned matrix.
    pub fn column_block(&self, columns: &[usize]) -> (DMatrix<f64>, MissingMask) {
        let n = self.nrows();
        let mut out = DMatrix::zeros(n, columns.len());
        let mut mask = MissingMask::none(n, columns.len());
        for (jj, &j) in columns.iter().enumerate() {
            for i in 0..n {
                if self.mask.is_missing(i, j) {
                    mask.set(i, jj, true);
                    out[(i, jj)] = f64::NAN;
                } else {
                    out[(i, jj)] = self.x[(i, j)];
                }
            }
        }
        (out, mask)
    }

    /// Complete submatrix over the given rows and columns. All requested
    /// cells must be observed.
    pub fn complete_block(&self, rows: &[usize], columns: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), columns.len());
        for (ii, &i) in rows.iter().enumerate() {
            for (jj, &j) in columns.iter().enumerate() {
                out[(ii, jj)] = self.value(i, j).ok_or_else(|| {
                    Error::validation(format!(
                        "cell ({}, {}) is missing; not a complete block",
                        i + 1,
                        self.column_names[j]
                    ))
                })?;
            }
        }
        Ok(out)
    }

    /// Overall fraction of masked covariate cells.
    pub fn missing_fraction(&self) -> f64 {
        self.mask.missing_fraction()
    }
}

/// Regression coefficients with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: DVector<f64>,
    pub intercept: f64,
}

impl Coefficients {
    pub fn zeros(p: usize) -> Self {
        Coefficients {
            beta: DVector::zeros(p),
            intercept: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.len() == 0
    }
}

/// Boolean selection over a candidate set of variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub selected: Vec<bool>,
}

impl SelectionMask {
    pub fn none(len: usize) -> Self {
        SelectionMask {
            selected: vec![false; len],
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut selected = vec![false; len];
        for &i in indices {
            selected[i] = true;
        }
        SelectionMask { selected }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

/// Indices of rows fully observed over `columns`, ascending.
pub fn complete_rows(dataset: &Dataset, columns: &[usize]) -> Vec<usize> {
    (0..dataset.nrows())
        .filter(|&i| columns.iter().all(|&j| !dataset.mask().is_missing(i, j)))
        .collect()
}

/// Loads a dataset from a headered CSV file. Cells equal to `na_token` are
/// masked; the response column must contain none of them.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str, na_token: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| {
            Error::validation(format!(
                "response column '{response_column}' not found in header"
            ))
        })?;
    let column_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if column_names.is_empty() {
        return Err(Error::validation(
            "file contains only the response column; at least one covariate required",
        ));
    }

    let mut x_cells: Vec<f64> = Vec::new();
    let mut mask_cells: Vec<bool> = Vec::new();
    let mut y_vals: Vec<f64> = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = rec_idx + 2; // 1-based, after the header line
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let name = &headers[j];
            if field == na_token {
                if j == response_idx {
                    return Err(Error::validation(format!(
                        "missing response value at row {row}"
                    )));
                }
                x_cells.push(f64::NAN);
                mask_cells.push(true);
                continue;
            }
            let parsed: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if j == response_idx {
                y_vals.push(parsed);
            } else {
                x_cells.push(parsed);
                mask_cells.push(false);
            }
        }
    }

    let n = y_vals.len();
    let p = column_names.len();
    if n == 0 {
        return Err(Error::validation("file contains no data rows"));
    }
    let x = DMatrix::from_row_iterator(n, p, x_cells);
    let mask = MissingMask {
        nrows: n,
        ncols: p,
        cells: mask_cells,
    };
    Dataset::new(x, DVector::from_vec(y_vals), mask, column_names, response_column)
}

/// Writes a dataset back to CSV, covariates first and the response last.
/// Masked cells serialize as `na_token`; numbers use the shortest
/// round-trippable decimal form, so save/load is lossless.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, na_token: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut header: Vec<&str> = dataset.column_names().iter().map(|s| s.as_str()).collect();
    header.push(dataset.response_name());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..dataset.nrows() {
        let mut fields: Vec<String> = Vec::with_capacity(dataset.ncols() + 1);
        for j in 0..dataset.ncols() {
            match dataset.value(i, j) {
                Some(v) => fields.push(format!("{v}")),
                None => fields.push(na_token.to_string()),
            }
        }
        fields.push(format!("{}", dataset.response()[i]));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

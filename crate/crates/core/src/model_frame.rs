//! Microdata ingestion and construction of the fixed-layout design matrix.
//!
//! The wage model regresses log wages on education, education squared and an
//! optional block of numeric controls. This module loads a CSV extract into an
//! [`ObservationTable`], applying listwise deletion for unusable rows, and
//! turns it into a [`DesignMatrix`] whose columns are always ordered
//! `[intercept, h, h^2, z_1, ..., z_Q]`. The squared column is always built
//! internally from the education column (never read from the file) so that the
//! `column 2 == column 1 squared` invariant holds exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance of the rank check on the column-scaled design.
///
/// The decomposition formulas assume an identified mean equation, so a design
/// whose scaled rank-revealing factorization has a pivot ratio below this
/// bound is rejected at build time.
pub const RANK_PIVOT_TOL: f64 = 1e-10;

/// One usable micro observation: log wage, years of education, controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    /// Natural log of the wage.
    pub wage_log: f64,
    /// Years of education (non-negative).
    pub education: f64,
    /// Numeric control variables, one per configured control column.
    pub controls: Vec<f64>,
}

/// A filtered micro sample.
///
/// Invariants (established by [`load_table`] and the synthetic generator):
/// every stored field is finite, education is non-negative, every row carries
/// the same number of controls, and the table is nonempty.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    /// Retained rows.
    pub rows: Vec<ObservationRow>,
    /// Rows removed for missing / non-numeric / non-finite / out-of-domain values.
    pub dropped_rows: usize,
}

impl ObservationTable {
    /// Number of retained observations.
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of control variables carried by each row.
    pub fn n_controls(&self) -> usize {
        self.rows.first().map_or(0, |r| r.controls.len())
    }
}

/// Names the columns of the CSV extract and how to read the wage.
#[derive(Debug, Clone)]
pub struct CovariateSpec {
    /// Column holding the wage.
    pub wage_column: String,
    /// Column holding years of education.
    pub education_column: String,
    /// Columns holding the Q numeric controls (may be empty).
    pub control_columns: Vec<String>,
    /// When false the wage column is in levels and the natural log is applied
    /// at load time; rows with a non-positive wage are then dropped and counted.
    pub wage_is_log: bool,
}

impl CovariateSpec {
    /// Builds a spec with no controls and `wage_is_log = true`.
    pub fn new(wage_column: impl Into<String>, education_column: impl Into<String>) -> Self {
        CovariateSpec {
            wage_column: wage_column.into(),
            education_column: education_column.into(),
            control_columns: Vec::new(),
            wage_is_log: true,
        }
    }

    /// Checks that all referenced column names are pairwise distinct.
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = Vec::with_capacity(2 + self.control_columns.len());
        for name in [self.wage_column.as_str(), self.education_column.as_str()]
            .into_iter()
            .chain(self.control_columns.iter().map(|s| s.as_str()))
        {
            if seen.contains(&name) {
                return Err(Error::DuplicateColumn { name: name.into() });
            }
            seen.push(name);
        }
        Ok(())
    }
}

/// Response vector and regressor matrix with the fixed column layout
/// `[intercept, h, h^2, z_1, ..., z_Q]`.
///
/// Matrices built by [`build_design`] satisfy: column 0 is identically one,
/// column 2 equals column 1 squared elementwise (exactly), and the matrix has
/// full column rank. [`DesignMatrix::from_parts`] admits general regression
/// layouts (e.g. intercept-only designs) for estimator-level use; the layout
/// invariants are then the caller's responsibility and are re-checked by the
/// moment routines that rely on them.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    w: DVector<f64>,
    x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps a response vector and regressor matrix, checking finiteness and
    /// full column rank (but not the wage-model column layout).
    ///
    /// # Errors
    /// [`Error::DimensionMismatch`] if `w` and `x` disagree on the number of
    /// rows, and [`Error::RankDeficient`] if `x` loses rank at the relative
    /// pivot tolerance [`RANK_PIVOT_TOL`].
    pub fn from_parts(w: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if w.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "model_frame",
                left: w.len(),
                right: x.nrows(),
            });
        }
        if !(w.iter().all(|v| v.is_finite()) && x.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid_input(
                "model_frame",
                "design entries must be finite",
            ));
        }
        check_full_rank(&x)?;
        Ok(DesignMatrix { w, x })
    }

    /// Log-wage response vector.
    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    /// Regressor matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of regressors (3 + Q for wage-model layouts).
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Verifies the wage-model layout: p >= 3, unit intercept column and an
    /// exactly squared education column.
    pub fn check_wage_layout(&self) -> Result<()> {
        if self.p() < 3 {
            return Err(Error::DimensionMismatch {
                context: "model_frame: wage layout needs [1, h, h^2, ...]",
                left: self.p(),
                right: 3,
            });
        }
        for i in 0..self.n() {
            if self.x[(i, 0)] != 1.0 {
                return Err(Error::invalid_input(
                    "model_frame",
                    format!("intercept column is not identically one at row {i}"),
                ));
            }
            let h = self.x[(i, 1)];
            if self.x[(i, 2)] != h * h {
                return Err(Error::invalid_input(
                    "model_frame",
                    format!("column 2 is not the exact square of column 1 at row {i}"),
                ));
            }
        }
        Ok(())
    }
}

/// Loads a CSV extract, applying listwise deletion.
///
/// Rows with a missing (empty), non-numeric or non-finite value in any
/// selected column are dropped and counted, as are rows with negative
/// education and — when `spec.wage_is_log` is false — rows with a non-positive
/// wage (outside the domain of the log, which is applied at load).
///
/// # Arguments
/// * `path` - CSV file with a header row, comma separation, `.` decimals.
/// * `spec` - column names and the wage transform flag.
///
/// # Errors
/// Missing file, malformed CSV, a named column absent from the header,
/// duplicate column names, or zero usable rows after filtering.
pub fn load_table(path: &str, spec: &CovariateSpec) -> Result<ObservationTable> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::Io {
                    path: path.into(),
                    source,
                },
                _ => unreachable!(),
            },
            _ => Error::Csv {
                path: path.into(),
                source: e,
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { name: name.into() })
    };
    let wage_col = col_index(&spec.wage_column)?;
    let edu_col = col_index(&spec.education_column)?;
    let control_cols: Vec<usize> = spec
        .control_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
        match parse_row(&record, wage_col, edu_col, &control_cols, spec.wage_is_log) {
            Some(row) => rows.push(row),
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable { dropped });
    }
    Ok(ObservationTable {
        rows,
        dropped_rows: dropped,
    })
}

/// Parses one record under the listwise-deletion policy; `None` means "drop".
fn parse_row(
    record: &csv::StringRecord,
    wage_col: usize,
    edu_col: usize,
    control_cols: &[usize],
    wage_is_log: bool,
) -> Option<ObservationRow> {
    let field = |idx: usize| -> Option<f64> {
        let raw = record.get(idx)?.trim();
        if raw.is_empty() {
            return None;
        }
        raw.parse::<f64>().ok().filter(|v| v.is_finite())
    };
    let raw_wage = field(wage_col)?;
    let wage_log = if wage_is_log {
        raw_wage
    } else if raw_wage > 0.0 {
        raw_wage.ln()
    } else {
        return None;
    };
    let education = field(edu_col).filter(|h| *h >= 0.0)?;
    let controls = control_cols
        .iter()
        .map(|&c| field(c))
        .collect::<Option<Vec<f64>>>()?;
    Some(ObservationRow {
        wage_log,
        education,
        controls,
    })
}

/// Builds the `[1, h, h^2, z...]` design matrix from a filtered table.
///
/// # Errors
/// [`Error::EmptyTable`] for an empty table, [`Error::ControlCountMismatch`]
/// if rows and spec disagree on Q, and [`Error::RankDeficient`] when the
/// design loses rank (constant education makes `h^2` collinear with `[1, h]`,
/// a constant control is collinear with the intercept, ...).
pub fn build_design(table: &ObservationTable, spec: &CovariateSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let n = table.n();
    if n == 0 {
        return Err(Error::EmptyTable { dropped: table.dropped_rows });
    }
    let q = spec.control_columns.len();
    if table.n_controls() != q {
        return Err(Error::ControlCountMismatch {
            expected: q,
            found: table.n_controls(),
        });
    }
    let p = 3 + q;
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut w = DVector::<f64>::zeros(n);
    for (i, row) in table.rows.iter().enumerate() {
        debug_assert_eq!(row.controls.len(), q);
        w[i] = row.wage_log;
        x[(i, 0)] = 1.0;
        x[(i, 1)] = row.education;
        x[(i, 2)] = row.education * row.education;
        for (j, z) in row.controls.iter().enumerate() {
            x[(i, 3 + j)] = *z;
        }
    }
    DesignMatrix::from_parts(w, x)
}

/// Translates the education column by `eps`, rebuilding its square exactly.
///
/// Only columns 1 and 2 change; the shift preserves the column span (the new
/// columns are an invertible linear combination of the old ones), so full
/// rank carries over and is not re-checked.
///
/// # Arguments
/// * `design` - a wage-layout design matrix.
/// * `eps` - finite translation, may be negative or zero.
pub fn shift_education(design: &DesignMatrix, eps: f64) -> DesignMatrix {
    assert!(eps.is_finite(), "education shift must be finite");
    let mut x = design.x.clone();
    for i in 0..x.nrows() {
        let shifted = x[(i, 1)] + eps;
        x[(i, 1)] = shifted;
        x[(i, 2)] = shifted * shifted;
    }
    DesignMatrix {
        w: design.w.clone(),
        x,
    }
}

/// Rejects rank-deficient regressor matrices.
///
/// Columns are scaled to unit Euclidean norm first so the relative pivot
/// tolerance is meaningful when columns live on very different scales
/// (`h^2` versus the intercept), then the pivots of a column-pivoted QR are
/// compared against [`RANK_PIVOT_TOL`] times the largest pivot.
fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::RankDeficient { rank: p - 1, cols: p });
        }
        col /= norm;
    }
    let qr = scaled.col_piv_qr();
    let r = qr.r();
    let max_pivot = (0..p).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    let rank = (0..p)
        .filter(|&j| r[(j, j)].abs() > RANK_PIVOT_TOL * max_pivot)
        .count();
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    Ok(())
}

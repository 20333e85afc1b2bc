//! Crate-wide error type.
//!
//! Every failure carries the name of the layer it came from in its message so
//! that callers (in particular the CLI) can surface provenance without extra
//! bookkeeping. [`Error::is_numerical`] separates numerical failures (rank
//! deficiency, non-convergence, indefinite dispersion matrices, ...) from
//! input/usage problems, which is what the CLI uses to pick its exit code.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be opened or read.
    #[error("model_frame: cannot read '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The CSV reader rejected the file.
    #[error("model_frame: malformed CSV in '{path}': {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    /// A requested column is absent from the header row.
    #[error("model_frame: column '{name}' not found in the header")]
    MissingColumn { name: String },

    /// Column names overlap (e.g. education listed among the controls).
    #[error("model_frame: covariate columns must be distinct; '{name}' appears twice")]
    DuplicateColumn { name: String },

    /// Every row was filtered out.
    #[error("model_frame: no usable rows after filtering ({dropped} dropped)")]
    EmptyTable { dropped: usize },

    /// A table/spec pair disagrees about the number of control columns.
    #[error("model_frame: rows carry {found} controls but the spec names {expected}")]
    ControlCountMismatch { expected: usize, found: usize },

    /// The design matrix does not have full column rank.
    #[error("model_frame: design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    /// A quantile grid failed validation.
    #[error("estimators: invalid quantile grid: {reason}")]
    InvalidGrid { reason: String },

    /// A quantile index outside (0, 1).
    #[error("estimators: tau must lie strictly inside (0,1), got {tau}")]
    InvalidTau { tau: f64 },

    /// The interior-point solver hit its iteration budget.
    #[error(
        "estimators: quantile solver did not converge at tau={tau} \
         within {iterations} iterations (final duality gap {gap:.3e})"
    )]
    NoConvergence { tau: f64, iterations: usize, gap: f64 },

    /// A linear system that should be definite was not.
    #[error("estimators: {context}: linear system is numerically singular")]
    SingularSystem { context: &'static str },

    /// The exhaustive quantile oracle refuses instances beyond its budget.
    #[error("estimators: exact-oracle budget exceeded (n={n}, p={p}; limits n<=15, p<=4)")]
    OracleBudget { n: usize, p: usize },

    /// Every p-subset of rows was singular, so the oracle has no candidate.
    #[error("estimators: all {p}-row subsets of the design are singular")]
    OracleDegenerate { p: usize },

    /// The dispersion matrix had an eigenvalue below the repair band.
    #[error(
        "estimators: dispersion matrix eigenvalue {eigenvalue:.3e} is below the \
         PSD repair band for trace {trace:.3e}"
    )]
    NotPositiveSemidefinite { eigenvalue: f64, trace: f64 },

    /// Mismatched dimensions between two artifacts.
    #[error("{context}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// The sample moment convention needs at least two observations.
    #[error("decomposition: sample moment convention needs n >= 2, got {n}")]
    SampleTooSmall { n: usize },

    /// Standard errors need at least two bootstrap replications.
    #[error("inference: standard errors need at least 2 replications, got {b}")]
    TooFewReplications { b: usize },

    /// Significance stars are undefined for a non-positive standard error.
    #[error("inference: standard error must be positive, got {se}")]
    InvalidStandardError { se: f64 },

    /// A bootstrap replicate kept failing after the retry cap.
    #[error("inference: replicate {replicate} failed {attempts} attempts; last error: {last}")]
    ReplicateExhausted {
        replicate: usize,
        attempts: usize,
        last: String,
    },

    /// A synthetic-data specification is unusable (guard violation, bad law).
    #[error("validation: {reason}")]
    InvalidSynthetic { reason: String },

    /// Generic invalid input to a validation-layer routine.
    #[error("{context}: {reason}")]
    InvalidInput {
        context: &'static str,
        reason: String,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or usage).
    ///
    /// The CLI maps numerical failures to exit code 2 and everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NoConvergence { .. }
                | Error::SingularSystem { .. }
                | Error::OracleDegenerate { .. }
                | Error::NotPositiveSemidefinite { .. }
                | Error::ReplicateExhausted { .. }
        )
    }

    pub(crate) fn invalid_input(context: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            context,
            reason: reason.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: value {value} at index {index} is outside the domain")]
    Domain {
        kind: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{kind}: row {row}, column {col} has value {value}, outside the domain")]
    RowDomain {
        kind: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("{kind}: value {value} at index {index} is outside the gradient range")]
    GradientRange {
        kind: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{kind}: point does not lie on the simplex (coordinates sum to {sum})")]
    NotOnSimplex { kind: &'static str, sum: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid divergence parameters: {0}")]
    InvalidSpec(String),

    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem size {n} exceeds the configured cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("row {row} is not covered by any block of the partition")]
    Infeasible { row: usize },

    #[error("optimizer did not reach the constraint tolerance: residual {residual:e}")]
    NotConverged { residual: f64 },

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

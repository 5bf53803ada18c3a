use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("similarity to prototype {prototype} is not finite")]
    NonFiniteSimilarity { prototype: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A similarity evaluation failed; `location` carries (row, column) when
    /// the failure happened while filling a similarity matrix.
    #[error("similarity evaluation failed{}: {message}", fmt_location(.location))]
    Evaluation {
        location: Option<(usize, usize)>,
        message: String,
    },

    #[error("gradient mode `{mode}` is not supported by a {kind} similarity")]
    UnsupportedGradMode {
        mode: &'static str,
        kind: &'static str,
    },

    #[error("coefficient system is singular (even after diagonal jitter)")]
    SingularSystem,

    #[error("coefficients are stale for the current prototypes (residual {residual:.3e})")]
    StaleCoefficients { residual: f64 },

    #[error("update of prototype {prototype} is not finite even with a halved step")]
    NonFiniteUpdate { prototype: usize },

    #[error("lasso did not converge after {sweeps} sweeps (KKT residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("{path}: line {line}: {message}", path = .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_location(location: &Option<(usize, usize)>) -> String {
    match location {
        Some((row, col)) => format!(" at ({row}, {col})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at(self, row: usize, col: usize) -> Self {
        match self {
            Error::Evaluation { message, .. } => Error::Evaluation {
                location: Some((row, col)),
                message,
            },
            other => other,
        }
    }
}

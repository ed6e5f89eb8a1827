use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("point ({x}, {y}) lies outside window [{xmin}, {xmax}] x [{ymin}, {ymax}]")]
    OutsideWindow {
        x: f64,
        y: f64,
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },

    #[error("duplicate pattern id `{0}`")]
    DuplicatePatternId(String),

    #[error("kernel configurations differ")]
    KernelMismatch,

    #[error("elements live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear system is singular or not positive definite: {0}")]
    SingularSystem(String),

    #[error("solve residual {residual:e} exceeds tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },

    #[error("covariance of group `{group}` is singular")]
    SingularCovariance { group: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("basis cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("leave-one-out fold for case {case} failed: {source}")]
    LoocvFold {
        case: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

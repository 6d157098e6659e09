use thiserror::Error;

/// Errors produced by the recovery library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank overflow: matrix has numerical rank {rank} but only {k} columns are available")]
    RankOverflow { rank: usize, k: usize },

    #[error("singular normal equations in column group {group}")]
    SingularSystem { group: usize },

    #[error("non-finite objective at iteration {iter}")]
    NonFinite { iter: usize },

    #[error("divergence at iteration {iter}: objective {objective:e} exceeds {limit:e}")]
    Divergence { iter: usize, objective: f64, limit: f64 },

    #[error("parse error for key `{key}`: {msg}")]
    Parse { key: String, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unreachable missing fraction {target}: maximum is {max}")]
    UnreachableFraction { target: f64, max: f64 },

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dims(r: usize, c: usize) -> String {
    format!("{r}x{c}")
}

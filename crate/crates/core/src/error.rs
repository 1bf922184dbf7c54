use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("size mismatch in {context}: expected {expected}, got {actual}")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("point {point:?} lies outside the reference {shape} domain")]
    OutsideDomain { shape: &'static str, point: Vec<f64> },

    #[error("invalid element {kind} {id}: {reason}")]
    InvalidElement {
        kind: &'static str,
        id: u32,
        reason: String,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("dangling {kind} id {id} referenced from {from}")]
    DanglingId {
        kind: &'static str,
        id: u32,
        from: String,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("heterogeneous collection: {0}")]
    Heterogeneous(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("session error: {0}")]
    Session(String),

    #[error("boundary condition error: {0}")]
    Boundary(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("non-finite value detected at step {step} ({context})")]
    NonFinite { step: usize, context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

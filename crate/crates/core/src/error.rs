use thiserror::Error;

use crate::trace::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {0:e})")]
    NotSymmetric(f64),

    #[error("eigenvalue magnitudes at positions {first} and {second} tie within relative gap {gap:e}")]
    Degenerate { first: usize, second: usize, gap: f64 },

    #[error("classes {first} and {second} have indistinguishable centroids")]
    Indistinguishable { first: usize, second: usize },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("zero vector cannot be normalized")]
    ZeroNorm,

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("({u}, {v}) is not an edge")]
    NotAnEdge { u: usize, v: usize },

    #[error("size guard exceeded: {0}")]
    TooLarge(String),

    #[error("iteration diverged at t={t} on node {node}")]
    Divergence {
        t: f64,
        node: usize,
        /// Samples recorded before the divergence was detected.
        trace: Option<Box<Trace>>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

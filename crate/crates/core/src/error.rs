use thiserror::Error;

use crate::sparsity::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("negative weight {weight} on edge {from} -> {to}")]
    NegativeWeight { from: usize, to: usize, weight: f64 },

    #[error("self loop on node {node} (diagonal entries must be zero)")]
    SelfLoop { node: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("edge index {index} out of range for a graph with {n} nodes")]
    EdgeOutOfRange { index: usize, n: usize },

    #[error("not a Laplacian: {0}")]
    NotLaplacian(String),

    #[error("unknown graph family '{0}'")]
    UnknownFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("order n = {0} outside the supported range 1..=8")]
    OrderOutOfRange(usize),

    #[error("precondition failed for operand {operand}: {violation}")]
    LemmaPrecondition { operand: usize, violation: Violation },

    #[error("theorem precondition violated: {0}")]
    Precondition(String),

    #[error("eigensolver did not converge for a {dim} x {dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("system is not stable: spectral abscissa {abscissa:e}")]
    Unstable { abscissa: f64 },

    #[error("singular algebraic loop: {0}")]
    IllPosedLoop(&'static str),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

/// Errors raised anywhere in the offline or online pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("invalid cell parameters: {0}")]
    InvalidParams(String),

    #[error("parameter vector {alpha:?} lies outside the box of cell type {cell_type}")]
    OutOfBox { cell_type: usize, alpha: Vec<f64> },

    #[error("solid phase does not percolate along axes {axes:?} or has {components} components")]
    DisconnectedSolid { axes: Vec<usize>, components: usize },

    #[error("unit cell has no fluid voxels")]
    NoFluidPhase,

    #[error("iterative solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("homogenization failed at cell type {cell_type}, alpha {alpha:?}: {source}")]
    NodeFailure {
        cell_type: usize,
        alpha: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("catalogue format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: u32, found: u32 },

    #[error("catalogue checksum failure: {0}")]
    ChecksumFailure(String),

    #[error("malformed catalogue: {0}")]
    Malformed(String),

    #[error(
        "resource bound {target} unreachable: achievable solid fraction range is [{min:.4}, {max:.4}]"
    )]
    BisectionBracketFailure { target: f64, min: f64, max: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

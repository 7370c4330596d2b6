//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("eigensolver did not converge within {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("weight evaluation failed at {0:?}: {1}")]
    WeightEvaluation(Vec<f64>, String),

    #[error("quadrature hit a singular weight node at {0:?}")]
    SingularNode(Vec<f64>),

    #[error("cube {0} leaves the lattice window")]
    OutsideWindow(String),

    #[error("ellipsoid fit failed: {0}")]
    EllipsoidFit(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("root finding did not converge within {0} iterations")]
    RootFinding(usize),

    #[error("wavelet system: {0}")]
    Wavelet(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("missing reducing operator for cube {0}")]
    MissingReducer(String),

    #[error("molecule check: {0}")]
    Molecule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

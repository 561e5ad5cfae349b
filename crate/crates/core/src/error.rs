use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Phase masks do not assign exactly one label to a voxel.
    #[error("phase masks do not partition the cell: voxel {voxel} covered {count} times")]
    Partition { voxel: usize, count: usize },

    #[error("coercivity violated at voxel {voxel}: eigenvalue {eigenvalue}")]
    Coercivity { voxel: usize, eigenvalue: f64 },

    #[error("phase {phase} tensor is not positive definite (eigenvalue {eigenvalue})")]
    PhaseCoercivity { phase: usize, eigenvalue: f64 },

    #[error("tensor is not symmetric: |a_{row}{col} - a_{col}{row}| = {gap}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("point coincides with the center of crystallite {0}")]
    SingularPoint(usize),

    #[error("malformed voxel file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

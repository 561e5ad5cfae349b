//! Periodic homogenization toolkit: cell correctors, effective conductivity,
//! field-concentration moments and their lower bounds.

pub mod cell_solver;
pub mod concentration;
pub mod error;
pub mod fem;
mod fft;
pub mod field;
pub mod geometry;
pub mod macro_solver;
pub mod reduce;
pub mod schulgasser;
pub mod sweep;
pub mod tensor;
pub mod voxel_io;

pub use cell_solver::{
    effective_tensor, equilibrium_residual, solve_corrector, CorrectorSolution, EffectiveTensor,
    SolverOptions,
};
pub use error::{Error, Result};
pub use field::{MatrixField, Weights};
pub use geometry::{CellGrid, Crystallite, SchulgasserCell};
pub use tensor::Tensor2;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Dense matrices, reverse-mode differentiation and the Adam optimiser.

mod adam;
pub mod checkpoint;
pub(crate) mod kernels;
mod matrix;
mod params;
mod tape;
mod tensor3;

pub use adam::Adam;
pub use checkpoint::{fmt_f64, Checkpoint};
pub use kernels::NORM_EPS;
pub use matrix::DenseMatrix;
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor3::{SparseMatrix, Tensor};

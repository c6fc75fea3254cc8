//! Dense matrices and reverse-mode differentiation.

mod dense;
pub mod gradcheck;
mod tape;

pub use dense::DenseMatrix;
pub use tape::{Gradients, ParamId, ParamStore, Parameter, Tape, Var};

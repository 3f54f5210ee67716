//! Minimal reverse-mode differentiation over dense matrices and
//! edge-weighted sparse aggregation.

mod gradcheck;
mod param;
mod suite;
mod tape;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use param::{Param, ParamId, ParamStore};
pub use suite::{gradcheck_suite, SUITE_EPS};
pub use tape::{softmax_exp, EdgeWeights, Gradients, Matrix, Tape, Var};

//! Dense tensors with reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::Tensor;
pub use params::{backward, Bindings, Gradients, ParamStore};
pub use tape::{edge_adjust_value, Tape, Var};

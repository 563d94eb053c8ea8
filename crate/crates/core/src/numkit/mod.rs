//! Dense tensors and reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_tape_fn, finite_diff_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

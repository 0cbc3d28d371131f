//! Minimal differentiable dense-array engine.

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

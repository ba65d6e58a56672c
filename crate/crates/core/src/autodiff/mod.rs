//! Reverse-mode differentiation over dense tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, finite_diff_check_fn};
pub(crate) use tape::softmax_in_place;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

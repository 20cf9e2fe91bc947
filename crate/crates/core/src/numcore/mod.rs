//! Dense tensors and a reverse-mode autodiff tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, BlockCheck, GradCheckReport};
pub use tape::{Gradients, NodeId, OpKind, Tape};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

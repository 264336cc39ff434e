//! Small reverse-mode automatic differentiation engine over dense 2-D
//! tensors, plus the Adam optimizer.
//!
//! Graphs are built eagerly on a [`Tape`]: every operation computes its value
//! immediately and records how to push gradients back to its inputs.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Groups, SparseMatrix, Tape, Var};
pub use tensor::Tensor;

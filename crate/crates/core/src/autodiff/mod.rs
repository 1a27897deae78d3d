//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adamw;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use tape::{Gradients, Tape, Unary, Var};
pub use tensor::Tensor;

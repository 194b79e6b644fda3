//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is built fresh for every forward pass, so bags of different
//! lengths need no padding. Values are recorded as they are computed and
//! [`Tape::backward`] sweeps the record once in reverse.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradient, check_gradients};
pub use tape::{BinaryOp, Gradients, ReduceOp, Tape, UnaryOp, Var};
pub use tensor::Tensor;

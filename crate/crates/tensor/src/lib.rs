//! Dense tensors and a reverse-mode gradient tape.
//!
//! The crate is deliberately small: it covers exactly what a stride-1,
//! same-padded residual CNN needs (elementwise arithmetic, matrix products,
//! convolution via im2col, PReLU, per-channel affine transforms and an L1
//! reduction). Every operation is available in `f32` for training and `f64`
//! for gradient verification.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles and differentiated with
//! [`Tape::backward`].

mod element;
mod error;
pub mod kernels;
mod shape;
mod tape;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use shape::Shape;
pub use tape::{CustomOp, Gradients, NodeId, Tape, Var};
pub use tensor::{BitPattern, Tensor};

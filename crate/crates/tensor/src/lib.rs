//! Dense NHWC tensors in `f64` with reverse-mode automatic differentiation.
//!
//! The op set is deliberately small: what a hierarchical transformer encoder,
//! a convolutional decoder and dense cross-entropy training need. Every op is
//! deterministic and single-threaded, so identical inputs give bit-identical
//! outputs and gradients.

mod array;
mod error;
pub mod gradcheck;
mod ops;
mod tensor;

pub use array::Array;
pub use error::{Result, TensorError};
pub use ops::conv::Conv2dParams;
pub use ops::resize::{axis_taps, Interp, Tap};
pub use tensor::{Grads, Tensor, TensorId};

//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! sweeps it in reverse and returns gradients for all tracked leaves. The op
//! set is the one needed by convolutional transformers on small images:
//! (grouped) convolution, linear layers, channel-wise layer norm, batched
//! matrix products, softmax, pixel (un)shuffle and elementwise arithmetic.

pub mod counter;
pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use kernels::Conv2dParams;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

//! Minimal N-dimensional tensor engine with reverse-mode differentiation.
//!
//! Values are 64-bit reals in row-major order. A [`Tape`] records the
//! forward pass; [`Tape::backward`] replays it in reverse, accumulating
//! gradients for every node on a path to a parameter leaf.
//!
//! Network inputs are single trials shaped `[channels, rows, cols, time]`;
//! batching is handled by the caller (one tape per trial, gradients summed
//! in trial order so results are independent of worker count).

mod adam;
mod check;
mod conv;
mod pool;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use adam::{adam_step, Adam, AdamParams};
pub use check::{gradient_check, GradCheckReport};
pub use conv::ConvKernel3D;
pub use tape::{NodeId, Padding, Tape};
pub use tensor::Tensor;

//! Minimal reverse-mode differentiation engine for 1-D convolutional nets.
//!
//! The engine is built around batched sequence tensors laid out as
//! `[channels, batch, time]` in row-major order, which lets every
//! convolution run as a single im2col + GEMM call over the whole batch.
//! Graphs are recorded on a [`Tape`]; [`Tape::backward`] walks the record
//! in reverse and accumulates gradients for every node that needs them.
//!
//! Element type is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for finite-difference verification).

mod ckpt;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub mod gradcheck;

pub use ckpt::{blob_path, load_checkpoint, manifest_path, save_checkpoint, CheckpointEntry};
pub use optim::{AdamParams, OptimizerState};
pub use scalar::Scalar;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Negative slope used by every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Dropout rate applied in the first two decoder layers during training.
pub const DROPOUT_RATE: f64 = 0.2;

//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit floats on the CPU, rank 1 or rank 2, row-major.
//! Operations are recorded on a [`Graph`] (a Wengert tape); a single call to
//! [`Graph::backward`] replays the tape in reverse and populates gradients
//! for every reachable tensor that requires them.
//!
//! The op set is deliberately small: exactly what an attention block with a
//! LayerNorm/MLP head and a cosine cross-entropy objective needs.

mod error;
mod graph;
mod kernels;
mod tensor;

pub mod gradcheck;

pub use error::TensorError;
pub use graph::{Graph, TensorId};
pub use tensor::Tensor;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TensorError>;

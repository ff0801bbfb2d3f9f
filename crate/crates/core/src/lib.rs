//! Compositional zero-shot learning engine.
//!
//! Learns propagation routes between state–object composition embeddings
//! with multi-head self-attention, projects the propagated embeddings into
//! the image-feature space, scores images by cosine compatibility, and
//! evaluates with the generalized calibration-bias protocol (seen/unseen
//! accuracy, harmonic mean, AUC). Operates on precomputed image features.

pub mod checkpoint;
pub mod data;
mod error;
pub mod evaluator;
pub mod model;
pub mod propagator;
pub mod routes;
pub mod scoring;
pub mod trainer;

pub use error::{CoreError, Result};

//! Anchor-free Siamese tracking at desk scale.
//!
//! The crate is organized around a small dense-tensor core with reverse-mode
//! differentiation, a line-based backbone description language with stride and
//! receptive-field analysis, training-target construction and losses, an
//! online tracker, a deterministic synthetic-sequence generator, an SGD
//! training loop, and one-pass-evaluation metrics.

pub mod backbone;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ppm;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod train;

mod parallel;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Gated linear units with the Signed Quadratic Shrink (SQS) gate.
//!
//! The crate bundles everything needed to train small GLU classifiers on
//! MNIST-family data and to read their features straight out of the weights:
//!
//! - [`tensor`]: dense tensors with define-by-run reverse-mode differentiation.
//! - [`gates`]: SQS, ReLU, GELU, Swish and identity gates with exact derivatives.
//! - [`model`]: GLU layers and the embedding → GLU → readout classifier.
//! - [`checkpoint`]: a small little-endian binary format for models.
//! - [`data`]: IDX parsing, batching and input-noise augmentation.
//! - [`train`]: AdamW, cosine schedule, and the epoch loop with checkpointed metrics.
//! - [`interp`]: per-logit interaction matrices, symmetric eigensolvers,
//!   spectra, cross-model similarity, attribution and PGM export.
//! - [`bench`]: forward + backward timing of a single GLU across gates.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fmt;
pub mod gates;
pub mod interp;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gates::{GateKind, GateSpec};
pub use model::{init_model, GluLayer, GluMlpModel, ModelConfig};
pub use tensor::{Graph, Tensor, Var};

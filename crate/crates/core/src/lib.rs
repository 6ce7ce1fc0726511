//! TFCNs: a CNN-transformer hybrid for medical image segmentation.
//!
//! The crate is self-contained: [`tensor`] provides dense tensors with
//! reverse-mode differentiation, [`layers`] and [`model`] assemble the
//! dense-block encoder/decoder with a transformer bottleneck and attention
//! gated skips, [`loss`] and [`metrics`] implement the training objective
//! and the Dice/Jaccard/HD95 evaluation, [`training`] runs SGD with momentum,
//! and [`data`] handles file formats and synthetic datasets.

pub mod data;
pub mod error;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};

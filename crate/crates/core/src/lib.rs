//! Class-enhancement contrastive learning for long-tailed classification.
//!
//! The crate is organized around the pieces of the training recipe:
//!
//! - [`data`]: synthetic long-tailed datasets, 3:1:1 splits and two-view batches
//! - [`network`]: shared MLP encoder with a classifier head and a normalized
//!   projection head, with hand-written backpropagation
//! - [`proxy`]: the hybrid proxy bank (reversed-imbalance allocation, cycle updates)
//! - [`losses`]: balanced hybrid-proxy contrastive loss, supervised contrastive
//!   loss, curriculum-weighted cross-entropy
//! - [`trainer`]: the epoch loop with cosine learning rate and checkpoint selection
//! - [`metrics`]: accuracy, macro precision/recall/F1, one-vs-rest AUC, confusion matrices
//! - [`gradcheck`]: central finite-difference verification of every analytic gradient
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what the CLI and the verification suites use.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod proxy;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type AugmentedBatch64 = data::AugmentedBatch<f64>;
pub type NetworkParams64 = network::NetworkParams<f64>;
pub type NetworkParams32 = network::NetworkParams<f32>;
pub type ProxyBank64 = proxy::ProxyBank<f64>;
pub type ProxyBank32 = proxy::ProxyBank<f32>;
pub type LossOutput64 = losses::LossOutput<f64>;
pub type TrainOutcome64 = trainer::TrainOutcome<f64>;

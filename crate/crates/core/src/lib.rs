//! Adaptive scan pooling for sequence classification.
//!
//! A sequence of frame features is pooled in one pass: a small network
//! scores how much each incoming frame adds to what has been pooled so far,
//! and the pooled vector is the running importance-weighted mean. The pooled
//! vector is ℓ2-normalized and classified by an affine softmax head. Training
//! minimizes cross-entropy plus an entropy penalty on the importances.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The type
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! gradient checks and the command-line tool use.
//!
//! Modules:
//! - [`numcore`]: tensors and the reverse-mode autodiff tape
//! - [`pooling`]: adaptive scan, mean, max, and multiple-instance poolers
//! - [`model`]: importance network, classifier head, loss, persistence
//! - [`data`]: synthetic benchmark, JSONL ingestion, subsampling
//! - [`train`]: Adam, gradient clipping, training loop, metrics

pub mod data;
pub mod error;
pub mod model;
pub mod numcore;
pub mod pooling;
mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use pooling::Pooler;
pub use rng::mix_seed;
pub use scalar::Scalar;

pub type Tensor = numcore::Tensor<f64>;
pub type Tape = numcore::Tape<f64>;
pub type FeatureSequence = pooling::FeatureSequence<f64>;
pub type PoolState = pooling::PoolState<f64>;
pub type Dataset = data::Dataset<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type ImportanceMlp = model::ImportanceMlp<f64>;
pub type AdamState = train::AdamState<f64>;
pub type TrainOutcome = train::TrainOutcome<f64>;

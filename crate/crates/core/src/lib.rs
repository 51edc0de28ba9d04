//! Multimodal data representations: early fusion, late fusion and
//! locality-sensitive-hashing sketches over per-modality embeddings, with
//! from-scratch classifier heads, evaluation metrics and an ablation runner.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for the common cases.

pub mod bench;
pub mod error;
pub mod fusion;
pub mod labels;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod scalar;
pub mod sketch;
pub mod store;

pub use error::{Error, Result};
pub use labels::{Labels, Task};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Dataset64 = store::Dataset<f64>;
pub type Dataset32 = store::Dataset<f32>;
pub type EmbeddingRecord64 = store::EmbeddingRecord<f64>;
pub type EmbeddingRecord32 = store::EmbeddingRecord<f32>;
pub type HyperplaneBank64 = sketch::HyperplaneBank<f64>;
pub type HyperplaneBank32 = sketch::HyperplaneBank<f32>;
pub type CountSketch64 = sketch::CountSketch<f64>;
pub type CountSketch32 = sketch::CountSketch<f32>;
pub type FusedVector64 = fusion::FusedVector<f64>;
pub type Network64 = neural::Network<f64>;
pub type Network32 = neural::Network<f32>;
pub type TrainedModel64 = neural::TrainedModel<f64>;
pub type TrainedModel32 = neural::TrainedModel<f32>;
pub type LogisticModel64 = neural::LogisticModel<f64>;
pub type Predictions64 = metrics::Predictions<f64>;

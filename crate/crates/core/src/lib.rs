//! Sample-level raw-waveform convolutional networks for music
//! classification, with multi-level and multi-scale feature aggregation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not need to choose.

pub mod aggregate;
pub mod audio;
pub mod classifier;
pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Param, Parameterized, Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type SampleCnn32 = model::SampleCnn<f32>;
pub type SampleCnn64 = model::SampleCnn<f64>;
pub type SongClassifier32 = classifier::SongClassifier<f32>;
pub type SongClassifier64 = classifier::SongClassifier<f64>;
pub type SongFeature32 = aggregate::SongFeature<f32>;
pub type SongFeature64 = aggregate::SongFeature<f64>;
pub type FeatureFile32 = aggregate::FeatureFile<f32>;
pub type FeatureFile64 = aggregate::FeatureFile<f64>;

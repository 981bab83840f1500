//! Hierarchical attention networks for user-level classification of mental
//! health conditions from post histories, with linear and character n-gram
//! baselines, the seeded evaluation protocol, and attention analysis.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod han;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type HanModel64 = han::HanModel<f64>;
pub type HanModel32 = han::HanModel<f32>;
pub type HanParams64 = han::HanParams<f64>;
pub type HanParams32 = han::HanParams<f32>;

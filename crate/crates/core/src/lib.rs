//! Correlation-based scoring of neuron explanations from a small, importance
//! sampled set of human-labeled inputs.

pub mod aggregation;
pub mod benchmark;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod pipeline;
pub mod scoring;
pub mod seed;
pub mod simulator;

pub use error::{Error, ErrorClass, Result};

//! Counterfactual explanations for time-series classifiers.
//!
//! The crate bundles six counterfactual generators, small trainable
//! classifiers, a sparsity/plausibility aware metric suite and a benchmark
//! harness with rank aggregation and critical-difference analysis.

pub mod cf;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod series;
pub mod synthetic;

pub use classifier::{Architecture, ClassifierModel, Prediction, TrainConfig};
pub use dataset::{Dataset, LabeledInstance};
pub use error::{Error, Result};
pub use series::{instance_range, TimeSeries};

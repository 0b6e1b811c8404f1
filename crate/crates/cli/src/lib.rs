//! Experiment orchestration for the `deepfeat` binary: config parsing and
//! the staged pipeline from pooled features to report tables.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, ExperimentConfig};
pub use pipeline::{Pipeline, PipelineError, RunLedger, Stage, StageStatus};

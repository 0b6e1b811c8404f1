//! Core algorithms for benchmarking pooled deep features with classical
//! classifiers: array I/O, pooling, stratified splits, the classifier suite,
//! importance-based feature selection, random search and evaluation.

pub mod classifiers;
pub mod dataset;
pub mod evaluation;
pub mod feature_selection;
pub mod pooling;
pub mod rng;
pub mod synthetic;
pub mod tensor_io;
pub mod tuning;

/// Crate version, recorded in run ledgers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use classifiers::{
    fit, predict, ClassifierKind, FitError, HyperParams, ParamValue, TrainedModel,
};
pub use dataset::{FeatureMatrix, LabelVector, SplitIndices};
pub use tensor_io::{read_array, write_array, DatasetManifest, Tensor};

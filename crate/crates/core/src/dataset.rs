//! Labeled feature matrices, the stratified holdout split, and z-scoring.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("feature matrix must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{ids} sample ids for {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {class} has {count} samples; at least 3 are needed to split")]
    ClassTooSmall { class: usize, count: usize },
    #[error("split ratios must be positive and sum to 1 (got {0:?})")]
    BadRatios((f64, f64, f64)),
}

/// `n x d` pooled embeddings with row-aligned sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    sample_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, sample_ids: Vec<String>) -> Result<Self, DatasetError> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(DatasetError::Empty { rows, cols });
        }
        if sample_ids.len() != rows {
            return Err(DatasetError::IdCountMismatch {
                ids: sample_ids.len(),
                rows,
            });
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DatasetError::NonFinite { row, col });
        }
        Ok(Self { values, sample_ids })
    }

    /// Builds a matrix with ids `"0".."n-1"`.
    pub fn anonymous(values: Array2<f64>) -> Result<Self, DatasetError> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(values, ids)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Integer labels in `[0, K)` plus the class-name table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, class_names: Vec<String>) -> Result<Self, DatasetError> {
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DatasetError::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            labels,
            class_names,
        })
    }

    /// Labels with generated names `"0".."K-1"`.
    pub fn with_classes(labels: Vec<usize>, num_classes: usize) -> Result<Self, DatasetError> {
        Self::new(labels, (0..num_classes).map(|c| c.to_string()).collect())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Standard 64/16/20 holdout ratios.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// Per-class sizes `(train, val, test)` under the floor/floor/remainder rule.
pub fn class_split_sizes(m: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    // The epsilon absorbs representation error such as 100 * 0.64 = 64.00000000000001
    // or 1764 * 0.16 landing just under an integer.
    let floor = |x: f64| (x + 1e-9).floor() as usize;
    let train = floor(m as f64 * ratios.0).min(m);
    let val = floor(m as f64 * ratios.1).min(m - train);
    (train, val, m - train - val)
}

/// Stratified three-way split. Each class is shuffled by a seed-determined
/// permutation, then cut into train/val/test by [`class_split_sizes`]. Output
/// index lists are sorted ascending.
pub fn stratified_split(
    labels: &LabelVector,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices, DatasetError> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes()];
    for (i, &l) in labels.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < 3 {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
    }
    let mut rng = Rng::new(seed);
    let mut split = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut members in by_class {
        rng.shuffle(&mut members);
        let (tr, va, _) = class_split_sizes(members.len(), ratios);
        split.train.extend_from_slice(&members[..tr]);
        split.val.extend_from_slice(&members[tr..tr + va]);
        split.test.extend_from_slice(&members[tr + va..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Rows of `x` at `idx`, in the given order.
pub fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Column statistics from a training slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// `None` for columns whose spread is below the degenerate threshold.
    pub scale: Vec<Option<f64>>,
}

const DEGENERATE_STD: f64 = 1e-12;

/// Fits per-column mean and population standard deviation.
pub fn standardize_fit(x_train: &Array2<f64>) -> Standardizer {
    let n = x_train.nrows().max(1) as f64;
    let mean: Array1<f64> = x_train.sum_axis(Axis(0)) / n;
    let scale = x_train
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, &m)| {
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (sd >= DEGENERATE_STD).then_some(sd)
        })
        .collect();
    Standardizer {
        mean: mean.to_vec(),
        scale,
    }
}

pub fn standardize_apply(s: &Standardizer, x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for (mut col, (m, sd)) in out.axis_iter_mut(Axis(1)).zip(s.mean.iter().zip(&s.scale)) {
        match sd {
            Some(sd) => col.mapv_inplace(|v| (v - m) / sd),
            None => col.mapv_inplace(|v| v - m),
        }
    }
    out
}

//! Global average pooling of `[C, H, W]` feature maps.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureMatrix, LabelVector};
use crate::tensor_io::{read_array, DatasetManifest, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("expected a [C, H, W] map, got rank {0}")]
    WrongRank(usize),
    #[error("feature map has zero extent: shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value at index {index:?}")]
    NonFinite { index: Vec<usize> },
    #[error("sample {sample_id:?} pools to {found} features, expected {expected}")]
    DimensionMismatch {
        sample_id: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {sample_id:?}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<PoolError>,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Length-`C` vector of per-channel spatial means.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature(pub Vec<f64>);

/// Pairwise summation; blocks of eight are summed left to right.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn global_average_pool(map: &Tensor) -> Result<PooledFeature, PoolError> {
    let shape = map.shape();
    if shape.len() != 3 {
        return Err(PoolError::WrongRank(shape.len()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c == 0 || h == 0 || w == 0 {
        return Err(PoolError::ZeroExtent(shape.to_vec()));
    }
    let values = map.to_f64_vec();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let plane = h * w;
        return Err(PoolError::NonFinite {
            index: vec![i / plane, (i % plane) / w, i % w],
        });
    }
    let area = (h * w) as f64;
    Ok(PooledFeature(
        values
            .chunks_exact(h * w)
            .map(|ch| pairwise_sum(ch) / area)
            .collect(),
    ))
}

/// Pools a `[C, H, W]` map, or passes a pre-pooled `[C]` vector through.
pub fn pool_tensor(t: &Tensor) -> Result<PooledFeature, PoolError> {
    match t.shape().len() {
        1 => {
            let v = t.to_f64_vec();
            if v.is_empty() {
                return Err(PoolError::ZeroExtent(t.shape().to_vec()));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(PoolError::NonFinite { index: vec![i] });
            }
            Ok(PooledFeature(v))
        }
        _ => global_average_pool(t),
    }
}

/// Reads and pools every manifest entry; row `i` is `entries[i]`.
pub fn pool_dataset(manifest: &DatasetManifest) -> Result<(FeatureMatrix, LabelVector), PoolError> {
    let d = manifest.feature_dim;
    let rows: Vec<Vec<f64>> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| {
            let entry = &manifest.entries[i];
            let path = manifest.feature_file(i);
            let wrap = |e: PoolError| PoolError::Sample {
                sample_id: entry.sample_id.clone(),
                source: Box::new(e),
            };
            let bytes = std::fs::read(&path).map_err(|source| PoolError::Io { path, source })?;
            let tensor = read_array(&bytes).map_err(|e| wrap(e.into()))?;
            let pooled = pool_tensor(&tensor).map_err(wrap)?;
            if pooled.0.len() != d {
                return Err(PoolError::DimensionMismatch {
                    sample_id: entry.sample_id.clone(),
                    expected: d,
                    found: pooled.0.len(),
                });
            }
            Ok(pooled.0)
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((n, d), flat).expect("rows have width d");
    let ids = manifest
        .entries
        .iter()
        .map(|e| e.sample_id.clone())
        .collect();
    let x = FeatureMatrix::new(values, ids)?;
    let y = LabelVector::new(manifest.labels.clone(), manifest.class_names.clone())?;
    Ok((x, y))
}

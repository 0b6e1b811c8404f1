//! Random forests (bootstrap + exhaustive thresholds) and extra trees
//! (full sample + one random threshold per candidate feature).

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::tree::{argmax, grow_tree, Columns, Criterion, DecisionTree, ThresholdMode, TreeConfig};
use crate::rng::{member_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

impl ForestConfig {
    pub fn random_forest(n_trees: usize, n_features: usize) -> Self {
        Self {
            n_trees,
            bootstrap: true,
            tree: TreeConfig {
                criterion: Criterion::Gini,
                max_features: sqrt_features(n_features),
                threshold_mode: ThresholdMode::Exhaustive,
                min_leaf: 1,
                max_depth: None,
            },
        }
    }

    pub fn extra_trees(n_trees: usize, n_features: usize) -> Self {
        Self {
            n_trees,
            bootstrap: false,
            tree: TreeConfig {
                threshold_mode: ThresholdMode::Random,
                ..Self::random_forest(n_trees, n_features).tree
            },
        }
    }
}

/// `ceil(sqrt(d))`, at least 1.
pub fn sqrt_features(d: usize) -> usize {
    let mut m = (d as f64).sqrt().ceil() as usize;
    // Guard against sqrt rounding on perfect squares.
    while m > 1 && (m - 1) * (m - 1) >= d {
        m -= 1;
    }
    while m * m < d {
        m += 1;
    }
    m.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
}

/// Tree `t` draws from its own generator seeded by `(seed, t)`, so the result
/// does not depend on how trees are scheduled across threads.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Forest {
    let cols = Columns::from_view(x);
    let n = x.nrows();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::new(member_seed(seed, "tree", t));
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(&cols, y, n_classes, &rows, &cfg.tree, &mut rng)
        })
        .collect();
    Forest { trees, n_classes }
}

impl Forest {
    /// Majority vote over trees; ties go to the smallest class index.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut votes = vec![0.0; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(row)] += 1.0;
        }
        argmax(&votes)
    }

    /// Mean over trees of size-normalized impurity decrease, rescaled to sum
    /// to 1; all zeros when no tree has a split.
    pub fn feature_importance(&self, n_features: usize) -> Vec<f64> {
        let mut total = vec![0.0; n_features];
        for t in &self.trees {
            let mut per_tree = vec![0.0; n_features];
            t.accumulate_gain(&mut per_tree);
            for (acc, g) in total.iter_mut().zip(per_tree) {
                *acc += g / t.n_samples as f64;
            }
        }
        let sum: f64 = total.iter().sum();
        if sum > 0.0 {
            total.iter_mut().for_each(|v| *v /= sum);
        }
        total
    }
}

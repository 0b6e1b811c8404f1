//! Multiclass gradient-boosted trees on the softmax loss.
//!
//! Each stage fits one regression tree per class to the per-class gradient
//! and hessian of the cross-entropy. Trees grow leaf-wise: the leaf whose best
//! histogram split has the largest gain is split next, until `max_leaves` is
//! reached or no split improves the loss. Features are pre-binned into at most
//! 256 quantile bins whose upper edges are training values, so a split on bin
//! `b` is the threshold `x <= upper[b]`.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::argmax;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub l2: f64,
    pub max_bins: usize,
    pub min_child_hessian: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_leaves: 31,
            learning_rate: 0.1,
            min_leaf: 20,
            l2: 1.0,
            max_bins: 256,
            min_child_hessian: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Second-order loss reduction of this split.
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                RegNode::Leaf { value } => return *value,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub n_classes: usize,
    pub init: Vec<f64>,
    /// `stages[s][k]` is the class-`k` tree of stage `s`.
    pub stages: Vec<Vec<RegTree>>,
}

impl GbdtModel {
    pub fn raw_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut f = self.init.clone();
        for stage in &self.stages {
            for (fk, tree) in f.iter_mut().zip(stage) {
                *fk += tree.predict_row(row);
            }
        }
        f
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        argmax(&self.raw_scores(row))
    }

    /// Sum of split gains per feature over every tree of every stage.
    pub fn feature_gain(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for tree in self.stages.iter().flatten() {
            for node in &tree.nodes {
                if let RegNode::Split { feature, gain, .. } = node {
                    out[*feature] += gain;
                }
            }
        }
        out
    }
}

/// Quantile bins of one feature; `uppers` are increasing training values.
#[derive(Debug, Clone)]
struct FeatureBins {
    uppers: Vec<f64>,
}

impl FeatureBins {
    fn fit(col: &[f64], max_bins: usize) -> Self {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() <= max_bins {
            return Self { uppers: distinct };
        }
        let n = sorted.len();
        let mut uppers: Vec<f64> = (1..=max_bins)
            .map(|b| sorted[(b * n).div_ceil(max_bins) - 1])
            .collect();
        uppers.dedup();
        Self { uppers }
    }

    fn bin(&self, v: f64) -> u8 {
        let b = self.uppers.partition_point(|&u| u < v);
        b.min(self.uppers.len() - 1) as u8
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: usize,
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Leaf {
    node: usize,
    rows: Vec<usize>,
    g: f64,
    h: f64,
    split: Option<SplitCandidate>,
}

struct Binned<'a> {
    bins: &'a [Vec<u8>],
    edges: &'a [FeatureBins],
    cfg: &'a GbdtConfig,
}

impl Binned<'_> {
    fn histogram(&self, rows: &[usize], grad: &[f64], hess: &[f64]) -> Vec<Vec<Bin>> {
        self.bins
            .iter()
            .zip(self.edges)
            .map(|(codes, edges)| {
                let mut hist = vec![Bin::default(); edges.uppers.len()];
                for &r in rows {
                    let b = &mut hist[codes[r] as usize];
                    b.g += grad[r];
                    b.h += hess[r];
                    b.n += 1;
                }
                hist
            })
            .collect()
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2)
    }

    /// Best split of a leaf; features ascending, bins ascending, strict
    /// improvement only.
    fn best_split(
        &self,
        rows: &[usize],
        g: f64,
        h: f64,
        grad: &[f64],
        hess: &[f64],
    ) -> Option<SplitCandidate> {
        let n = rows.len();
        if n < 2 * self.cfg.min_leaf {
            return None;
        }
        let parent = self.score(g, h);
        let mut best: Option<SplitCandidate> = None;
        for (feature, hist) in self.histogram(rows, grad, hess).iter().enumerate() {
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for (bin, b) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
                gl += b.g;
                hl += b.h;
                nl += b.n;
                let nr = n - nl;
                if nl < self.cfg.min_leaf || nr < self.cfg.min_leaf {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.cfg.min_child_hessian || hr < self.cfg.min_child_hessian {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                if gain > 0.0 && best.is_none_or(|s| gain > s.gain) {
                    best = Some(SplitCandidate { feature, bin, gain });
                }
            }
        }
        best
    }

    /// Grows one leaf-wise tree and returns it with the raw (unshrunk) leaf
    /// value of every row.
    fn grow(&self, n_rows: usize, grad: &[f64], hess: &[f64]) -> (RegTree, Vec<f64>) {
        let rows: Vec<usize> = (0..n_rows).collect();
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
        let split = self.best_split(&rows, g, h, grad, hess);
        let mut nodes = vec![RegNode::Leaf { value: 0.0 }];
        let mut leaves = vec![Leaf {
            node: 0,
            rows,
            g,
            h,
            split,
        }];
        while leaves.len() < self.cfg.max_leaves {
            let mut pick: Option<(usize, f64)> = None;
            for (i, leaf) in leaves.iter().enumerate() {
                if let Some(s) = leaf.split {
                    if pick.is_none_or(|(_, g)| s.gain > g) {
                        pick = Some((i, s.gain));
                    }
                }
            }
            let Some((i, _)) = pick else { break };
            let leaf = leaves.remove(i);
            let s = leaf.split.expect("picked leaf has a split");
            let codes = &self.bins[s.feature];
            let (lrows, rrows): (Vec<usize>, Vec<usize>) =
                leaf.rows.iter().partition(|&&r| codes[r] as usize <= s.bin);
            let l_id = nodes.len();
            nodes.push(RegNode::Leaf { value: 0.0 });
            nodes.push(RegNode::Leaf { value: 0.0 });
            nodes[leaf.node] = RegNode::Split {
                feature: s.feature,
                threshold: self.edges[s.feature].uppers[s.bin],
                left: l_id,
                right: l_id + 1,
                gain: s.gain,
            };
            for (node, rows) in [(l_id, lrows), (l_id + 1, rrows)] {
                let (g, h) = rows
                    .iter()
                    .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
                let split = self.best_split(&rows, g, h, grad, hess);
                let child = Leaf {
                    node,
                    rows,
                    g,
                    h,
                    split,
                };
                // Keep leaves ordered by node id so ties pick the oldest leaf.
                let pos = leaves.partition_point(|l| l.node < node);
                leaves.insert(pos, child);
            }
        }
        let mut row_values = vec![0.0; n_rows];
        for leaf in &leaves {
            let value = -leaf.g / (leaf.h + self.cfg.l2);
            nodes[leaf.node] = RegNode::Leaf { value };
            for &r in &leaf.rows {
                row_values[r] = value;
            }
        }
        (RegTree { nodes }, row_values)
    }
}

fn softmax_in_place(f: &mut [f64]) {
    let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in f.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in f.iter_mut() {
        *v /= s;
    }
}

/// Mean softmax cross-entropy of raw scores `f` (row-major `n x k`).
pub fn softmax_loss(f: &[f64], y: &[usize], k: usize) -> f64 {
    let n = y.len();
    let total: f64 = (0..n)
        .map(|i| {
            let row = &f[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y[i]]
        })
        .sum();
    total / n as f64
}

/// Fits the booster; also returns the training loss before the first stage
/// and after each stage.
pub fn fit_gbdt(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &GbdtConfig,
) -> (GbdtModel, Vec<f64>) {
    let n = x.nrows();
    let k = n_classes;
    let edges: Vec<FeatureBins> = x
        .columns()
        .into_iter()
        .map(|c| FeatureBins::fit(&c.to_vec(), cfg.max_bins.clamp(2, 256)))
        .collect();
    let bins: Vec<Vec<u8>> = x
        .columns()
        .into_iter()
        .zip(&edges)
        .map(|(c, e)| c.iter().map(|&v| e.bin(v)).collect())
        .collect();
    let binned = Binned {
        bins: &bins,
        edges: &edges,
        cfg,
    };

    let mut counts = vec![0usize; k];
    for &c in y {
        counts[c] += 1;
    }
    // Log class priors; classes absent from training get a floor.
    let init: Vec<f64> = counts
        .iter()
        .map(|&c| ((c.max(1)) as f64 / n as f64).ln())
        .collect();
    let mut f: Vec<f64> = (0..n).flat_map(|_| init.iter().copied()).collect();
    let factor = if k > 1 {
        k as f64 / (k as f64 - 1.0)
    } else {
        1.0
    };

    let mut losses = vec![softmax_loss(&f, y, k)];
    let mut stages = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let mut p = f.clone();
        p.chunks_exact_mut(k).for_each(softmax_in_place);
        let trees: Vec<(RegTree, Vec<f64>)> = (0..k)
            .into_par_iter()
            .map(|c| {
                let grad: Vec<f64> = (0..n)
                    .map(|i| p[i * k + c] - f64::from(u8::from(y[i] == c)))
                    .collect();
                let hess: Vec<f64> = (0..n)
                    .map(|i| {
                        let pc = p[i * k + c];
                        (factor * pc * (1.0 - pc)).max(1e-16)
                    })
                    .collect();
                let (mut tree, values) = binned.grow(n, &grad, &hess);
                for node in &mut tree.nodes {
                    if let RegNode::Leaf { value } = node {
                        *value *= cfg.learning_rate;
                    }
                }
                (tree, values)
            })
            .collect();
        let mut stage = Vec::with_capacity(k);
        for (c, (tree, values)) in trees.into_iter().enumerate() {
            for (i, v) in values.iter().enumerate() {
                f[i * k + c] += v * cfg.learning_rate;
            }
            stage.push(tree);
        }
        stages.push(stage);
        losses.push(softmax_loss(&f, y, k));
    }
    (
        GbdtModel {
            n_classes: k,
            init,
            stages,
        },
        losses,
    )
}

//! Classification trees shared by random forests and extra trees.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Feature-major copy of a design matrix; tree growth scans one feature at
/// a time.
#[derive(Debug, Clone)]
pub struct Columns {
    cols: Vec<Vec<f64>>,
    rows: usize,
}

impl Columns {
    pub fn from_view(x: ArrayView2<'_, f64>) -> Self {
        let cols = x.columns().into_iter().map(|c| c.to_vec()).collect();
        Self {
            cols,
            rows: x.nrows(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    /// Impurity scaled by node size, computed from class counts.
    fn weighted_impurity(self, counts: &[usize], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        match self {
            Criterion::Gini => {
                let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
                nf - sq / nf
            }
            Criterion::Entropy => -counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / nf;
                    c as f64 * p.log2()
                })
                .sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Every midpoint between consecutive distinct values.
    Exhaustive,
    /// One uniform draw in `(min, max)` per candidate feature.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub criterion: Criterion,
    pub max_features: usize,
    pub threshold_mode: ThresholdMode,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Size-weighted impurity decrease of this split.
        gain: f64,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_classes: usize,
    /// Rows (with multiplicity) the root was grown on.
    pub n_samples: usize,
}

impl DecisionTree {
    pub fn leaf_distribution(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
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
                Node::Leaf { distribution } => return distribution,
            }
        }
    }

    /// Majority class of the reached leaf; ties go to the smallest index.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        argmax(self.leaf_distribution(row))
    }

    pub fn root_gain(&self) -> f64 {
        match self.nodes.first() {
            Some(Node::Split { gain, .. }) => *gain,
            _ => 0.0,
        }
    }

    /// Adds each split's gain to its feature's slot.
    pub fn accumulate_gain(&self, out: &mut [f64]) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// First index of the maximum; NaN-free input assumed.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Grower<'a> {
    x: &'a Columns,
    y: &'a [usize],
    k: usize,
    cfg: &'a TreeConfig,
    nodes: Vec<Node>,
}

/// Grows one tree on `row_idx` (duplicates allowed, as in a bootstrap sample).
///
/// Each node draws features in a random order and keeps the first
/// `max_features` that are not constant within the node; those are scanned in
/// ascending index order and only a strictly larger gain replaces the
/// incumbent, so ties resolve to the smallest feature and then the smallest
/// threshold. Growth stops on purity, `max_depth`, or when no split leaves
/// `min_leaf` rows on both sides.
pub fn grow_tree(
    x: &Columns,
    y: &[usize],
    n_classes: usize,
    row_idx: &[usize],
    cfg: &TreeConfig,
    rng: &mut Rng,
) -> DecisionTree {
    assert!(!row_idx.is_empty(), "grow_tree needs at least one row");
    let mut g = Grower {
        x,
        y,
        k: n_classes,
        cfg,
        nodes: Vec::new(),
    };
    let mut rows = row_idx.to_vec();
    g.grow(&mut rows, 0, rng);
    DecisionTree {
        nodes: g.nodes,
        n_classes,
        n_samples: row_idx.len(),
    }
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn leaf(&mut self, counts: &[usize], n: usize) -> usize {
        let distribution = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes.push(Node::Leaf { distribution });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let n = rows.len();
        let counts = self.counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || n < 2 * self.cfg.min_leaf.max(1) {
            return self.leaf(&counts, n);
        }
        let Some(best) = self.best_split(rows, &counts, rng) else {
            return self.leaf(&counts, n);
        };

        let col = self.x.column(best.feature);
        // Stable partition keeps row order deterministic in the children.
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| col[r] <= best.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            distribution: Vec::new(),
        });
        let l = self.grow(&mut left, depth + 1, rng);
        let r = self.grow(&mut right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
            gain: best.gain,
        };
        id
    }

    fn candidate_features(&self, rows: &[usize], rng: &mut Rng) -> Vec<(usize, f64, f64)> {
        let d = self.x.features();
        let order = rng.permutation(d);
        let mut out = Vec::with_capacity(self.cfg.max_features);
        for f in order {
            if out.len() == self.cfg.max_features {
                break;
            }
            let col = self.x.column(f);
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(col[r]), hi.max(col[r]))
                });
            if lo < hi {
                out.push((f, lo, hi));
            }
        }
        out.sort_by_key(|c| c.0);
        out
    }

    fn best_split(&self, rows: &[usize], counts: &[usize], rng: &mut Rng) -> Option<Best> {
        let n = rows.len();
        let parent = self.cfg.criterion.weighted_impurity(counts, n);
        let min_leaf = self.cfg.min_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut consider = |feature: usize, threshold: f64, gain: f64| {
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Best {
                    feature,
                    threshold,
                    gain,
                });
            }
        };

        // Draw every random threshold before scanning so the stream does not
        // depend on which features turn out to be valid.
        let candidates = self.candidate_features(rows, rng);
        let draws: Vec<f64> = match self.cfg.threshold_mode {
            ThresholdMode::Random => candidates.iter().map(|_| rng.uniform()).collect(),
            ThresholdMode::Exhaustive => Vec::new(),
        };

        for (ci, &(f, lo, hi)) in candidates.iter().enumerate() {
            let col = self.x.column(f);
            match self.cfg.threshold_mode {
                ThresholdMode::Exhaustive => {
                    let mut sorted: Vec<usize> = rows.to_vec();
                    sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                    let mut left = vec![0usize; self.k];
                    let mut right = counts.to_vec();
                    for i in 1..n {
                        let moved = self.y[sorted[i - 1]];
                        left[moved] += 1;
                        right[moved] -= 1;
                        let (a, b) = (col[sorted[i - 1]], col[sorted[i]]);
                        if a >= b || i < min_leaf || n - i < min_leaf {
                            continue;
                        }
                        let gain = parent
                            - self.cfg.criterion.weighted_impurity(&left, i)
                            - self.cfg.criterion.weighted_impurity(&right, n - i);
                        consider(f, midpoint(a, b), gain);
                    }
                }
                ThresholdMode::Random => {
                    let mut t = lo + draws[ci] * (hi - lo);
                    if t >= hi {
                        t = lo;
                    }
                    let mut left = vec![0usize; self.k];
                    let mut nl = 0;
                    for &r in rows {
                        if col[r] <= t {
                            left[self.y[r]] += 1;
                            nl += 1;
                        }
                    }
                    if nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                    let gain = parent
                        - self.cfg.criterion.weighted_impurity(&left, nl)
                        - self.cfg.criterion.weighted_impurity(&right, n - nl);
                    consider(f, t, gain);
                }
            }
        }
        best.map(|mut b| {
            b.gain = b.gain.max(0.0);
            b
        })
    }
}

/// Midpoint of `a < b` that still separates them after rounding.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

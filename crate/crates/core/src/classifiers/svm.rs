//! One-vs-rest soft-margin SVMs trained by dual coordinate ascent.
//!
//! The bias is folded into the kernel (`K(a, b) + 1`), which removes the
//! equality constraint from the dual so each coordinate update is a clipped
//! Newton step on `0 <= alpha_i <= C`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::tree::argmax;
use crate::rng::{member_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    /// Bias-augmented Gram matrix `K(x_i, x_j) + 1`.
    pub fn gram(self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut g = Array2::zeros((n, n));
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| self.eval(x.row(i), x.row(j)) + 1.0)
                    .collect()
            })
            .collect();
        for (i, r) in rows.into_iter().enumerate() {
            for (j, v) in r.into_iter().enumerate() {
                g[[i, j]] = v;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub alpha: Vec<f64>,
    pub passes: usize,
    pub converged: bool,
}

/// Largest projected-gradient magnitude of the dual; zero at the optimum.
pub fn kkt_violation(gram: &Array2<f64>, sign: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = alpha.len();
    (0..n)
        .map(|i| {
            let g: f64 = (0..n)
                .map(|j| sign[i] * sign[j] * gram[[i, j]] * alpha[j])
                .sum::<f64>()
                - 1.0;
            projected(g, alpha[i], c).abs()
        })
        .fold(0.0, f64::max)
}

fn projected(g: f64, a: f64, c: f64) -> f64 {
    if a <= 0.0 {
        g.min(0.0)
    } else if a >= c {
        g.max(0.0)
    } else {
        g
    }
}

/// Dual coordinate ascent for labels `sign[i]` in `{-1, +1}`. Coordinates are
/// visited in a fresh random order each pass; training stops once every
/// projected gradient is within `tol`, or after `max_passes`.
pub fn train_binary(
    gram: &Array2<f64>,
    sign: &[f64],
    c: f64,
    tol: f64,
    max_passes: usize,
    rng: &mut Rng,
) -> BinarySvm {
    let n = sign.len();
    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a'Qa - sum(a).
    let mut grad = vec![-1.0; n];
    let mut passes = 0;
    let mut converged = false;
    while passes < max_passes {
        let order = rng.permutation(n);
        for &i in &order {
            let qii = gram[[i, i]];
            if projected(grad[i], alpha[i], c).abs() <= 1e-12 || qii <= 0.0 {
                continue;
            }
            let new = (alpha[i] - grad[i] / qii).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta == 0.0 {
                continue;
            }
            alpha[i] = new;
            let si = sign[i] * delta;
            for (j, gj) in grad.iter_mut().enumerate() {
                *gj += si * sign[j] * gram[[i, j]];
            }
        }
        passes += 1;
        let worst = (0..n)
            .map(|i| projected(grad[i], alpha[i], c).abs())
            .fold(0.0, f64::max);
        if worst <= tol {
            converged = true;
            break;
        }
    }
    BinarySvm {
        alpha,
        passes,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Training rows with a nonzero coefficient in at least one machine.
    pub support: Array2<f64>,
    /// `coef[k][s] = alpha_s * y_s` for machine `k` (class `k` vs rest).
    pub coef: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_svm(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    kernel: Kernel,
    c: f64,
    tol: f64,
    max_passes: usize,
    seed: u64,
) -> SvmModel {
    let gram = kernel.gram(x);
    let machines: Vec<(Vec<f64>, BinarySvm)> = (0..n_classes)
        .into_par_iter()
        .map(|k| {
            let sign: Vec<f64> = y.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            let mut rng = Rng::new(member_seed(seed, "ovr", k));
            let m = train_binary(&gram, &sign, c, tol, max_passes, &mut rng);
            (sign, m)
        })
        .collect();
    let keep: Vec<usize> = (0..x.nrows())
        .filter(|&i| machines.iter().any(|(_, m)| m.alpha[i] != 0.0))
        .collect();
    let support = x.select(ndarray::Axis(0), &keep);
    let coef = machines
        .iter()
        .map(|(sign, m)| keep.iter().map(|&i| m.alpha[i] * sign[i]).collect())
        .collect();
    SvmModel {
        kernel,
        c,
        support,
        coef,
    }
}

impl SvmModel {
    pub fn decision(&self, q: ArrayView1<'_, f64>) -> Vec<f64> {
        let k: Vec<f64> = self
            .support
            .rows()
            .into_iter()
            .map(|s| self.kernel.eval(s, q) + 1.0)
            .collect();
        self.coef
            .iter()
            .map(|c| c.iter().zip(&k).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest one-vs-rest margin; ties go to the smallest class.
    pub fn predict_row(&self, q: ArrayView1<'_, f64>) -> usize {
        argmax(&self.decision(q))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_row(x.row(i)))
            .collect()
    }
}

//! Multinomial logistic regression (L2-penalized) and the softmax
//! cross-entropy pieces shared with the L1 selector.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::tree::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `K x d`.
    pub weights: Array2<f64>,
    /// Length `K`, never penalized.
    pub intercept: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            weights: Array2::zeros((n_classes, n_features)),
            intercept: Array1::zeros(n_classes),
        }
    }

    /// Raw class scores, `n x K`.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.intercept
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.scores(x)
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()))
            .collect()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.intercept.iter())
            .copied()
            .collect()
    }

    fn from_flat(theta: &[f64], k: usize, d: usize) -> Self {
        Self {
            weights: Array2::from_shape_vec((k, d), theta[..k * d].to_vec()).expect("k*d weights"),
            intercept: Array1::from(theta[k * d..].to_vec()),
        }
    }
}

/// Row-wise softmax in place, shifted by the row max.
pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Mean softmax cross-entropy with its gradients `(dW, db)`.
pub fn cross_entropy(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    model: &LinearModel,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut p = model.scores(x);
    let mut loss = 0.0;
    for (row, &yi) in p.rows().into_iter().zip(y) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[yi];
    }
    softmax_rows(&mut p);
    for (mut row, &yi) in p.rows_mut().into_iter().zip(y) {
        row[yi] -= 1.0;
    }
    let grad_w = p.t().dot(&x) / n;
    let grad_b = p.sum_axis(Axis(0)) / n;
    (loss / n, grad_w, grad_b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOutcome {
    pub iterations: usize,
    pub converged: bool,
}

/// Limited-memory BFGS with Armijo backtracking. Stops when the gradient's
/// Euclidean norm drops to `tol`, after `max_iter` iterations, or when the
/// line search cannot make progress.
pub(crate) fn lbfgs(
    mut objective: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, LbfgsOutcome) {
    const MEMORY: usize = 10;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = x0;
    let (mut fx, mut g) = objective(&x);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for it in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= tol {
            return (
                x,
                LbfgsOutcome {
                    iterations: it,
                    converged: true,
                },
            );
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            q.iter_mut().for_each(|v| *v /= gnorm.max(1.0));
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                break Some((trial, ft, gt));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((xn, fn_, gn)) = accepted else {
            return (
                x,
                LbfgsOutcome {
                    iterations: it,
                    converged: false,
                },
            );
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let converged = dot(&g, &g).sqrt() <= tol;
    (
        x,
        LbfgsOutcome {
            iterations: max_iter,
            converged,
        },
    )
}

/// Minimizes `mean CE + ||W||^2 / (2 C n)`.
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    c: f64,
    tol: f64,
    max_iter: usize,
) -> (LinearModel, LbfgsOutcome) {
    let (n, d) = x.dim();
    let k = n_classes;
    let penalty = 1.0 / (c * n as f64);
    let objective = |theta: &[f64]| {
        let model = LinearModel::from_flat(theta, k, d);
        let (loss, gw, gb) = cross_entropy(x, y, &model);
        let reg = 0.5 * penalty * model.weights.iter().map(|w| w * w).sum::<f64>();
        let gw = gw + &(&model.weights * penalty);
        let grad: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
        (loss + reg, grad)
    };
    let (theta, outcome) = lbfgs(objective, LinearModel::zeros(k, d).to_flat(), tol, max_iter);
    (LinearModel::from_flat(&theta, k, d), outcome)
}

//! Single-hidden-layer perceptron: ReLU hidden units, softmax output,
//! mini-batch Adam on mean cross-entropy plus an L2 weight penalty.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::linear::softmax_rows;
use super::tree::argmax;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub alpha: f64,
    /// Smallest drop in epoch loss that resets the patience counter.
    pub min_improvement: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 20,
            batch_size: 32,
            alpha: 1e-4,
            min_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `d x h`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h x K`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_features: usize, hidden: usize, n_classes: usize, rng: &mut Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.uniform_range(-limit, limit))
        };
        let w1 = glorot(n_features, hidden);
        let w2 = glorot(hidden, n_classes);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(n_classes),
        }
    }

    fn hidden(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0))
    }

    /// Class probabilities, `n x K`.
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut s = self.hidden(x).dot(&self.w2) + &self.b2;
        softmax_rows(&mut s);
        s
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let s = self.hidden(x).dot(&self.w2) + &self.b2;
        s.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
    }

    /// `mean CE + alpha / (2 n) * (||W1||^2 + ||W2||^2)` over the given rows,
    /// with its gradient laid out like `self`.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        alpha: f64,
    ) -> (f64, MlpModel) {
        let n = x.nrows() as f64;
        let pre = x.dot(&self.w1) + &self.b1;
        let h = pre.mapv(|v| v.max(0.0));
        let mut p = h.dot(&self.w2) + &self.b2;
        softmax_rows(&mut p);
        let mut loss = 0.0;
        for (row, &yi) in p.rows().into_iter().zip(y) {
            loss -= row[yi].max(1e-300).ln();
        }
        let sq = |w: &Array2<f64>| w.iter().map(|v| v * v).sum::<f64>();
        loss = loss / n + alpha / (2.0 * n) * (sq(&self.w1) + sq(&self.w2));

        let mut delta2 = p;
        for (mut row, &yi) in delta2.rows_mut().into_iter().zip(y) {
            row[yi] -= 1.0;
        }
        delta2 /= n;
        let gw2 = h.t().dot(&delta2) + &(&self.w2 * (alpha / n));
        let gb2 = delta2.sum_axis(Axis(0));
        let mut delta1 = delta2.dot(&self.w2.t());
        ndarray::Zip::from(&mut delta1).and(&pre).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let gw1 = x.t().dot(&delta1) + &(&self.w1 * (alpha / n));
        let gb1 = delta1.sum_axis(Axis(0));
        (
            loss,
            MlpModel {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        )
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    /// Inverse of [`params_flat`](Self::params_flat); panics on a length mismatch.
    pub fn set_params_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.params_flat().len(), "parameter count");
        let mut it = theta.iter().copied();
        for v in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *v = it.next().expect("length checked");
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - Self::BETA2.powi(self.t)).sqrt() / (1.0 - Self::BETA1.powi(self.t));
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            theta[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + Self::EPS);
        }
    }
}

/// Trains for at most `max_epochs`, stopping once the epoch loss has failed
/// to improve by `min_improvement` for `patience` epochs in a row. Returns the
/// parameters with the lowest epoch loss and the loss of every epoch run.
pub fn fit_mlp(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &MlpConfig,
    seed: u64,
) -> (MlpModel, Vec<f64>) {
    let (n, d) = x.dim();
    let mut rng = Rng::new(seed);
    let mut model = MlpModel::init(d, cfg.hidden, n_classes, &mut rng);
    let mut theta = model.params_flat();
    let mut adam = Adam::new(theta.len());
    let batch = cfg.batch_size.clamp(1, n.max(1));

    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grad) = model.loss_and_grad(xb.view(), &yb, cfg.alpha);
            total += loss * chunk.len() as f64;
            adam.step(&mut theta, &grad.params_flat(), cfg.learning_rate);
            model.set_params_flat(&theta);
        }
        let epoch_loss = total / n as f64;
        losses.push(epoch_loss);
        if !epoch_loss.is_finite() {
            break;
        }
        if epoch_loss < best.0 - cfg.min_improvement {
            stale = 0;
        } else {
            stale += 1;
        }
        if epoch_loss < best.0 {
            best = (epoch_loss, model.clone());
        }
        if stale >= cfg.patience {
            break;
        }
    }
    (best.1, losses)
}

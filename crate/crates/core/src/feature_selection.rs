//! Embedded feature ranking from boosted-tree gain, forest impurity decrease
//! and L1-penalized logistic weights, plus top-fraction subset extraction.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::classifiers::linear::{cross_entropy, LinearModel};
use crate::classifiers::{
    fit, gbdt_feature_gain, rf_feature_importance, ClassifierKind, FitError, HyperParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SelectorMethod {
    Gbdt,
    Rf,
    Lasso,
}

impl SelectorMethod {
    pub const ALL: [SelectorMethod; 3] = [
        SelectorMethod::Gbdt,
        SelectorMethod::Rf,
        SelectorMethod::Lasso,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorMethod::Gbdt => "gbdt",
            SelectorMethod::Rf => "rf",
            SelectorMethod::Lasso => "lasso",
        }
    }
}

impl fmt::Display for SelectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let low = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == low)
            .ok_or_else(|| format!("unknown selector {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("fraction {0} is outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("subset index {index} is out of range for {width} columns")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("subset indices must be strictly ascending (position {0})")]
    NotAscending(usize),
    #[error("scores must be finite and non-negative (feature {0})")]
    BadScore(usize),
    #[error("L1 strength must be a non-negative number, got {0}")]
    BadLambda(f64),
    #[error("ranking CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub method: SelectorMethod,
    pub scores: Vec<f64>,
    /// Feature indices by descending score; ties by ascending index.
    pub order: Vec<usize>,
}

impl ImportanceRanking {
    pub fn new(method: SelectorMethod, scores: Vec<f64>) -> Result<Self, SelectionError> {
        if let Some(j) = scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(SelectionError::BadScore(j));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Self {
            method,
            scores,
            order,
        })
    }

    pub fn width(&self) -> usize {
        self.scores.len()
    }
}

/// Selector defaults: 300 trees, 31 leaves, learning rate 0.1.
pub fn gbdt_selector_params() -> HyperParams {
    HyperParams::new()
        .with("n_trees", 300i64)
        .with("leaves", 31i64)
        .with("lr", 0.1)
}

/// Selector defaults: 300 trees, `ceil(sqrt(d))` features per split.
pub fn rf_selector_params() -> HyperParams {
    HyperParams::new()
        .with("n_trees", 300i64)
        .with("max_features", "sqrt")
}

pub fn rank_by_gbdt(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &HyperParams,
    seed: u64,
) -> Result<ImportanceRanking, SelectionError> {
    let m = fit(ClassifierKind::Gbdt, x, y, n_classes, params, seed)?;
    ImportanceRanking::new(SelectorMethod::Gbdt, gbdt_feature_gain(&m)?)
}

pub fn rank_by_rf(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &HyperParams,
    seed: u64,
) -> Result<ImportanceRanking, SelectionError> {
    let m = fit(ClassifierKind::Rf, x, y, n_classes, params, seed)?;
    ImportanceRanking::new(SelectorMethod::Rf, rf_feature_importance(&m)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoParams {
    /// L1 strength on the weights (the intercept is unpenalized).
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once no parameter moves by more than this in one step.
    pub tol: f64,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub model: LinearModel,
    /// Penalized objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_priors(y: &[usize], k: usize) -> Array1<f64> {
    let mut c = vec![0.0; k];
    for &l in y {
        c[l] += 1.0;
    }
    let n = y.len() as f64;
    Array1::from_iter(
        c.into_iter()
            .map(|v| if v > 0.0 { (v / n).ln() } else { -30.0 }),
    )
}

/// Gradient of the mean cross-entropy with respect to the weights at zero
/// weights and prior intercepts, in max-abs norm: the smallest L1 strength at
/// which the all-zero weight matrix is optimal.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> f64 {
    let (_, gw, _) = cross_entropy(x, y, &null_model(y, n_classes, x.ncols()));
    gw.iter().fold(0.0f64, |a, g| a.max(g.abs()))
}

fn null_model(y: &[usize], n_classes: usize, d: usize) -> LinearModel {
    let mut model = LinearModel::zeros(n_classes, d);
    model.intercept = log_priors(y, n_classes);
    model
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Multinomial logistic regression with an L1 weight penalty, by proximal
/// gradient descent. Each step starts from a Barzilai-Borwein length and
/// halves it until the quadratic upper bound holds, which makes the penalized
/// objective non-increasing. Starts from zero weights and prior intercepts,
/// which is already optimal once `lambda >= lambda_max`.
pub fn fit_lasso(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &LassoParams,
) -> LassoFit {
    let d = x.ncols();
    let lambda = params.lambda;
    let l1 = |m: &LinearModel| lambda * m.weights.iter().map(|w| w.abs()).sum::<f64>();
    let mut model = null_model(y, n_classes, d);
    let (mut f, mut gw, mut gb) = cross_entropy(x, y, &model);
    let mut objective = vec![f + l1(&model)];
    if lambda >= gw.iter().fold(0.0f64, |a, g| a.max(g.abs())) {
        return LassoFit {
            model,
            objective,
            iterations: 0,
            converged: true,
        };
    }
    let mut step = 1.0;
    let mut prev: Option<(LinearModel, Array2<f64>, Array1<f64>)> = None;
    for it in 0..params.max_iter {
        if let Some((pm, pgw, pgb)) = &prev {
            let sw = &model.weights - &pm.weights;
            let sb = &model.intercept - &pm.intercept;
            let yw = &gw - pgw;
            let yb = &gb - pgb;
            let ss = sw.iter().map(|v| v * v).sum::<f64>() + sb.iter().map(|v| v * v).sum::<f64>();
            let sy = (&sw * &yw).sum() + (&sb * &yb).sum();
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-10, 1e10);
            }
        }
        let (next, fn_, ngw, ngb, delta_inf) = loop {
            let mut cand = LinearModel::zeros(n_classes, d);
            ndarray::Zip::from(&mut cand.weights)
                .and(&model.weights)
                .and(&gw)
                .for_each(|c, &w, &g| *c = soft_threshold(w - step * g, step * lambda));
            cand.intercept = &model.intercept - &(&gb * step);
            let dw = &cand.weights - &model.weights;
            let db = &cand.intercept - &model.intercept;
            let lin = (&dw * &gw).sum() + (&db * &gb).sum();
            let sq = dw.iter().map(|v| v * v).sum::<f64>() + db.iter().map(|v| v * v).sum::<f64>();
            let (fc, cgw, cgb) = cross_entropy(x, y, &cand);
            if fc <= f + lin + sq / (2.0 * step) || step < 1e-14 {
                let inf = dw
                    .iter()
                    .chain(db.iter())
                    .fold(0.0f64, |a, v| a.max(v.abs()));
                break (cand, fc, cgw, cgb, inf);
            }
            step *= 0.5;
        };
        prev = Some((std::mem::replace(&mut model, next), gw, gb));
        f = fn_;
        gw = ngw;
        gb = ngb;
        objective.push(f + l1(&model));
        if delta_inf <= params.tol {
            return LassoFit {
                model,
                objective,
                iterations: it + 1,
                converged: true,
            };
        }
    }
    LassoFit {
        model,
        objective,
        iterations: params.max_iter,
        converged: false,
    }
}

/// Per-feature score: the largest absolute weight over classes.
pub fn lasso_scores(model: &LinearModel) -> Vec<f64> {
    model
        .weights
        .axis_iter(Axis(1))
        .map(|col| col.iter().fold(0.0f64, |a, w| a.max(w.abs())))
        .collect()
}

pub fn rank_by_lasso(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &LassoParams,
) -> Result<(ImportanceRanking, LassoFit), SelectionError> {
    if params.lambda.is_nan() || params.lambda < 0.0 {
        return Err(SelectionError::BadLambda(params.lambda));
    }
    let fit = fit_lasso(x, y, n_classes, params);
    let ranking = ImportanceRanking::new(SelectorMethod::Lasso, lasso_scores(&fit.model))?;
    Ok((ranking, fit))
}

/// Candidate strengths `{1e-3, 1e-2, 1e-1, 1, 10} * lambda_max / 10`.
pub fn lasso_lambda_grid(lmax: f64) -> Vec<f64> {
    [1e-3, 1e-2, 1e-1, 1.0, 10.0]
        .iter()
        .map(|m| m * lmax / 10.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoChoice {
    pub lambda: f64,
    pub converged: bool,
    /// `(lambda, validation accuracy)` for every grid point.
    pub trials: Vec<(f64, f64)>,
}

/// Fits every grid strength on the training slice and keeps the one whose
/// model scores best on the validation slice; ties go to the stronger penalty.
pub fn select_lasso(
    x_train: ArrayView2<'_, f64>,
    y_train: &[usize],
    x_val: ArrayView2<'_, f64>,
    y_val: &[usize],
    n_classes: usize,
    base: &LassoParams,
) -> Result<(ImportanceRanking, LassoChoice), SelectionError> {
    use rayon::prelude::*;
    let grid = lasso_lambda_grid(lambda_max(x_train, y_train, n_classes));
    let fits: Vec<(f64, LassoFit, f64)> = grid
        .par_iter()
        .map(|&lambda| {
            let p = LassoParams { lambda, ..*base };
            let fit = fit_lasso(x_train, y_train, n_classes, &p);
            let pred = fit.model.predict(x_val);
            let hits = pred.iter().zip(y_val).filter(|(a, b)| a == b).count();
            let acc = if y_val.is_empty() {
                0.0
            } else {
                hits as f64 / y_val.len() as f64
            };
            (lambda, fit, acc)
        })
        .collect();
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.2 >= fits[best].2 {
            best = i;
        }
    }
    let (lambda, fit, _) = &fits[best];
    let ranking = ImportanceRanking::new(SelectorMethod::Lasso, lasso_scores(&fit.model))?;
    Ok((
        ranking,
        LassoChoice {
            lambda: *lambda,
            converged: fit.converged,
            trials: fits.iter().map(|f| (f.0, f.2)).collect(),
        },
    ))
}

/// `ceil(p * d)`, computed so that exact products such as `0.3 * 1000` are
/// not pushed up by binary rounding.
pub fn subset_size(d: usize, p: f64) -> Result<usize, SelectionError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SelectionError::FractionOutOfRange(p));
    }
    let raw = p * d as f64;
    let n = (raw - raw.abs() * 1e-12).ceil().max(0.0) as usize;
    Ok(n.clamp(usize::from(d > 0), d))
}

/// The `ceil(p * d)` best-ranked features, sorted ascending.
pub fn select_top_fraction(r: &ImportanceRanking, p: f64) -> Result<Vec<usize>, SelectionError> {
    let n = subset_size(r.width(), p)?;
    let mut idx = r.order[..n].to_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Column slice of `x`; `idx` must be strictly ascending and in range.
pub fn apply_subset(x: ArrayView2<'_, f64>, idx: &[usize]) -> Result<Array2<f64>, SelectionError> {
    for (i, &j) in idx.iter().enumerate() {
        if j >= x.ncols() {
            return Err(SelectionError::IndexOutOfRange {
                index: j,
                width: x.ncols(),
            });
        }
        if i > 0 && idx[i - 1] >= j {
            return Err(SelectionError::NotAscending(i));
        }
    }
    Ok(x.select(Axis(1), idx))
}

pub const RANKING_CSV_HEADER: &str = "feature_index,score,rank,method";

/// One row per feature in rank order; rank starts at 1.
pub fn ranking_csv(r: &ImportanceRanking) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RANKING_CSV_HEADER.split(','))
        .expect("in-memory write");
    for (rank, &j) in r.order.iter().enumerate() {
        w.write_record([
            j.to_string(),
            format!("{:?}", r.scores[j]),
            (rank + 1).to_string(),
            r.method.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn parse_ranking_csv(text: &str) -> Result<ImportanceRanking, SelectionError> {
    let err = |line: usize, reason: &str| SelectionError::Csv {
        line,
        reason: reason.to_string(),
    };
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| err(1, &e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RANKING_CSV_HEADER {
        return Err(err(1, "missing header"));
    }
    let mut rows = Vec::new();
    let mut method = None;
    for (i, rec) in rd.records().enumerate() {
        let ln = i + 2;
        let rec = rec.map_err(|e| err(ln, &e.to_string()))?;
        let j: usize = rec[0].parse().map_err(|_| err(ln, "bad feature_index"))?;
        let s: f64 = rec[1].parse().map_err(|_| err(ln, "bad score"))?;
        let m: SelectorMethod = rec[3].parse().map_err(|e: String| err(ln, &e))?;
        if *method.get_or_insert(m) != m {
            return Err(err(ln, "mixed methods"));
        }
        rows.push((j, s));
    }
    let d = rows.len();
    let mut scores = vec![f64::NAN; d];
    for (i, &(j, s)) in rows.iter().enumerate() {
        if j >= d || !scores[j].is_nan() {
            return Err(err(i + 2, "feature indices are not a permutation"));
        }
        scores[j] = s;
    }
    let r = ImportanceRanking::new(method.unwrap_or(SelectorMethod::Gbdt), scores)?;
    if r.order != rows.iter().map(|r| r.0).collect::<Vec<_>>() {
        return Err(err(2, "row order disagrees with scores"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ceil_ratio(d: usize, percent: usize) -> usize {
        (d * percent).div_ceil(100)
    }

    #[test]
    fn subset_sizes_match_published_dimensions() {
        let r = |d| ImportanceRanking::new(SelectorMethod::Gbdt, vec![0.0; d]).unwrap();
        let got: Vec<usize> = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05]
            .iter()
            .map(|&p| select_top_fraction(&r(768), p).unwrap().len())
            .collect();
        assert_eq!(got, vec![384, 308, 231, 154, 77, 39]);
        assert_eq!(select_top_fraction(&r(1024), 0.1).unwrap().len(), 103);
        assert_eq!(select_top_fraction(&r(2048), 0.1).unwrap().len(), 205);
        assert_eq!(select_top_fraction(&r(320), 0.5).unwrap().len(), 160);
    }

    #[test]
    fn ceil_rule_exhaustive() {
        for d in 1..=4096 {
            for (p, pct) in [
                (0.05, 5),
                (0.1, 10),
                (0.2, 20),
                (0.3, 30),
                (0.4, 40),
                (0.5, 50),
                (1.0, 100),
            ] {
                assert_eq!(
                    subset_size(d, p).unwrap(),
                    ceil_ratio(d, pct),
                    "d={d} p={p}"
                );
            }
        }
    }

    #[test]
    fn fraction_bounds() {
        assert_eq!(
            subset_size(10, 0.0),
            Err(SelectionError::FractionOutOfRange(0.0))
        );
        assert!(subset_size(10, 1.5).is_err());
        assert!(subset_size(10, f64::NAN).is_err());
    }

    #[test]
    fn ranking_ties_by_index() {
        let r = ImportanceRanking::new(SelectorMethod::Rf, vec![0.1, 0.5, 0.1, 0.5, 0.0]).unwrap();
        assert_eq!(r.order, vec![1, 3, 0, 2, 4]);
        assert_eq!(select_top_fraction(&r, 0.5).unwrap(), vec![0, 1, 3]);
        assert!(ImportanceRanking::new(SelectorMethod::Rf, vec![f64::NAN]).is_err());
    }

    #[test]
    fn subset_checks() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(apply_subset(x.view(), &[0, 1, 2]).unwrap(), x);
        assert_eq!(apply_subset(x.view(), &[2]).unwrap(), array![[3.0], [6.0]]);
        assert!(matches!(
            apply_subset(x.view(), &[1, 1]),
            Err(SelectionError::NotAscending(1))
        ));
        assert!(matches!(
            apply_subset(x.view(), &[3]),
            Err(SelectionError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let r = ImportanceRanking::new(SelectorMethod::Lasso, vec![0.25, 0.0, 1.0 / 3.0, 0.25])
            .unwrap();
        let text = ranking_csv(&r);
        assert!(text.starts_with("feature_index,score,rank,method\n2,"));
        assert_eq!(parse_ranking_csv(&text).unwrap(), r);
        assert!(parse_ranking_csv("nope\n").is_err());
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let x = array![[0.5, -1.0], [1.5, 0.2], [-0.3, 0.8], [0.0, -0.4]];
        let y = [0, 1, 1, 0];
        let p = LassoParams {
            lambda: 1e6,
            ..LassoParams::default()
        };
        let (r, fit) = rank_by_lasso(x.view(), &y, 2, &p).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn lambda_max_is_the_zeroing_threshold() {
        let x = array![
            [0.5, -1.0, 0.3],
            [1.5, 0.2, -0.7],
            [-0.3, 0.8, 0.1],
            [0.0, -0.4, 0.9],
            [1.1, 0.6, -0.2]
        ];
        let y = [0, 1, 2, 0, 1];
        let lmax = lambda_max(x.view(), &y, 3);
        let nonzero = |lambda: f64| {
            let p = LassoParams {
                lambda,
                max_iter: 20_000,
                tol: 1e-10,
            };
            fit_lasso(x.view(), &y, 3, &p)
                .model
                .weights
                .iter()
                .filter(|w| **w != 0.0)
                .count()
        };
        assert_eq!(nonzero(lmax), 0);
        assert_eq!(nonzero(lmax * 1.01), 0);
        assert!(nonzero(lmax * 0.99) > 0);
    }
}

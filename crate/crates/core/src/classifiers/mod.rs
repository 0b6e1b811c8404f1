//! The seven classifiers behind one `fit` / `predict` contract.

pub mod forest;
pub mod gbdt;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod params;
pub mod serialize;
pub mod svm;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use thiserror::Error;

use forest::{fit_forest, Forest, ForestConfig};
use gbdt::{fit_gbdt, GbdtConfig, GbdtModel};
use knn::{KnnModel, Metric};
use linear::{fit_logistic, LinearModel};
use mlp::{fit_mlp, MlpConfig, MlpModel};
use params::Getter;
pub use params::{validate, HyperParams, ParamValue};
use svm::{fit_svm, Kernel, SvmModel};
use tree::Criterion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassifierKind {
    Lr,
    Knn,
    Svm,
    Mlp,
    Rf,
    Et,
    Gbdt,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::Lr,
        ClassifierKind::Knn,
        ClassifierKind::Svm,
        ClassifierKind::Mlp,
        ClassifierKind::Rf,
        ClassifierKind::Et,
        ClassifierKind::Gbdt,
    ];

    /// Short name used in file names, CSVs and configs.
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Lr => "LR",
            ClassifierKind::Knn => "KNN",
            ClassifierKind::Svm => "SVM",
            ClassifierKind::Mlp => "MLP",
            ClassifierKind::Rf => "RF",
            ClassifierKind::Et => "ET",
            ClassifierKind::Gbdt => "GBDT",
        }
    }

    /// Column label for rendered tables.
    pub fn display_label(self) -> &'static str {
        match self {
            ClassifierKind::Gbdt => "GBDT (LGBM-style)",
            other => other.name(),
        }
    }

    /// Whether inputs should be standardized before fitting.
    pub fn requires_standardization(self) -> bool {
        !matches!(
            self,
            ClassifierKind::Rf | ClassifierKind::Et | ClassifierKind::Gbdt
        )
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        match up.as_str() {
            "ANN" => Ok(ClassifierKind::Mlp),
            "LGBM" | "LIGHTGBM" => Ok(ClassifierKind::Gbdt),
            _ => Self::ALL
                .into_iter()
                .find(|k| k.name() == up)
                .ok_or_else(|| format!("unknown classifier {s:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("{kind}: invalid parameter {key}: {reason}")]
    InvalidParam {
        kind: ClassifierKind,
        key: String,
        reason: String,
    },
    #[error("training labels cover fewer than two classes")]
    SingleClass,
    #[error("empty training set")]
    EmptyInput,
    #[error("{rows} rows but {labels} labels, or a label outside [0, {classes})")]
    LabelMismatch {
        rows: usize,
        labels: usize,
        classes: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("operation needs a {expected} model, got {found}")]
    WrongKind {
        expected: &'static str,
        found: ClassifierKind,
    },
    #[error("model expects {expected} features, input has {found}")]
    WidthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    /// Fallback when every training row is identical.
    Constant {
        class: usize,
    },
    Logistic(LinearModel),
    Knn(KnnModel),
    Svm(SvmModel),
    Mlp(MlpModel),
    Forest(Forest),
    Gbdt(GbdtModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ClassifierKind,
    pub n_classes: usize,
    pub n_features: usize,
    pub seed: u64,
    pub params: HyperParams,
    pub body: ModelBody,
}

fn check_inputs(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> Result<(), FitError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(FitError::EmptyInput);
    }
    if x.nrows() != y.len() || y.iter().any(|&l| l >= n_classes) {
        return Err(FitError::LabelMismatch {
            rows: x.nrows(),
            labels: y.len(),
            classes: n_classes,
        });
    }
    if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(FitError::NonFinite { row, col });
    }
    let first = y[0];
    if y.iter().all(|&l| l == first) {
        return Err(FitError::SingleClass);
    }
    Ok(())
}

fn majority(y: &[usize], n_classes: usize) -> usize {
    let mut c = vec![0.0; n_classes];
    for &l in y {
        c[l] += 1.0;
    }
    tree::argmax(&c)
}

fn forest_config(kind: ClassifierKind, g: &Getter<'_>, d: usize) -> ForestConfig {
    let n_trees = g.int("n_trees", 100);
    let mut cfg = if kind == ClassifierKind::Rf {
        ForestConfig::random_forest(n_trees, d)
    } else {
        ForestConfig::extra_trees(n_trees, d)
    };
    cfg.tree.criterion = Criterion::Gini;
    cfg.tree.max_depth = g.opt_int("max_depth");
    cfg.tree.min_leaf = g.int("min_leaf", 1);
    cfg.tree.max_features = match g.0.get("max_features") {
        Some(ParamValue::Int(m)) => (*m as usize).min(d),
        Some(ParamValue::Str(s)) if s == "all" => d,
        _ => forest::sqrt_features(d),
    };
    cfg
}

fn gbdt_config(g: &Getter<'_>) -> GbdtConfig {
    let base = GbdtConfig::default();
    GbdtConfig {
        n_trees: g.int("n_trees", base.n_trees),
        max_leaves: g.int("leaves", base.max_leaves),
        learning_rate: g.float("lr", base.learning_rate),
        min_leaf: g.int("min_leaf", base.min_leaf),
        l2: g.float("l2", base.l2),
        max_bins: g.int("bins", base.max_bins),
        ..base
    }
}

/// Fits `kind` on `x` (rows are samples) with labels in `[0, n_classes)`.
///
/// Unset parameters take per-kind defaults. The result depends only on the
/// inputs, `params` and `seed`, never on the thread count. If every row is
/// identical the fit short-circuits to a constant majority-class model.
pub fn fit(
    kind: ClassifierKind,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &HyperParams,
    seed: u64,
) -> Result<TrainedModel, FitError> {
    validate(kind, params)?;
    check_inputs(x, y, n_classes)?;
    let (_, d) = x.dim();
    let g = Getter(params);
    let first = x.row(0);
    let degenerate = x.rows().into_iter().all(|r| r == first);
    let body = if degenerate {
        ModelBody::Constant {
            class: majority(y, n_classes),
        }
    } else {
        match kind {
            ClassifierKind::Lr => {
                let (m, _) = fit_logistic(
                    x,
                    y,
                    n_classes,
                    g.float("C", 1.0),
                    g.float("tol", 1e-6),
                    g.int("max_iter", 2000),
                );
                ModelBody::Logistic(m)
            }
            ClassifierKind::Knn => ModelBody::Knn(KnnModel {
                k: g.int("k", 5),
                metric: Metric::parse(g.str("metric", "euclidean")).expect("validated"),
                x: x.to_owned(),
                y: y.to_vec(),
                n_classes,
            }),
            ClassifierKind::Svm => {
                let kernel = match g.str("kernel", "rbf") {
                    "linear" => Kernel::Linear,
                    _ => Kernel::Rbf {
                        gamma: g.float("gamma", 1.0 / d as f64),
                    },
                };
                ModelBody::Svm(fit_svm(
                    x,
                    y,
                    n_classes,
                    kernel,
                    g.float("C", 1.0),
                    g.float("tol", 1e-4),
                    g.int("max_passes", 1000),
                    seed,
                ))
            }
            ClassifierKind::Mlp => {
                let base = MlpConfig::default();
                let cfg = MlpConfig {
                    hidden: g.int("hidden", base.hidden),
                    learning_rate: g.float("lr", base.learning_rate),
                    max_epochs: g.int("max_epochs", base.max_epochs),
                    patience: g.int("patience", base.patience),
                    batch_size: g.int("batch_size", base.batch_size),
                    alpha: g.float("alpha", base.alpha),
                    ..base
                };
                ModelBody::Mlp(fit_mlp(x, y, n_classes, &cfg, seed).0)
            }
            ClassifierKind::Rf | ClassifierKind::Et => ModelBody::Forest(fit_forest(
                x,
                y,
                n_classes,
                &forest_config(kind, &g, d),
                seed,
            )),
            ClassifierKind::Gbdt => ModelBody::Gbdt(fit_gbdt(x, y, n_classes, &gbdt_config(&g)).0),
        }
    };
    Ok(TrainedModel {
        kind,
        n_classes,
        n_features: d,
        seed,
        params: params.clone(),
        body,
    })
}

/// Predicted class per row of `x`.
pub fn predict(model: &TrainedModel, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, FitError> {
    use rayon::prelude::*;
    if x.ncols() != model.n_features {
        return Err(FitError::WidthMismatch {
            expected: model.n_features,
            found: x.ncols(),
        });
    }
    let rows = |f: &(dyn Fn(&[f64]) -> usize + Sync)| -> Vec<usize> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| f(&x.row(i).to_vec()))
            .collect()
    };
    Ok(match &model.body {
        ModelBody::Constant { class } => vec![*class; x.nrows()],
        ModelBody::Logistic(m) => m.predict(x),
        ModelBody::Knn(m) => m.predict(x),
        ModelBody::Svm(m) => m.predict(x),
        ModelBody::Mlp(m) => m.predict(x),
        ModelBody::Forest(m) => rows(&|r| m.predict_row(r)),
        ModelBody::Gbdt(m) => rows(&|r| m.predict_row(r)),
    })
}

/// Total split gain per feature over all trees and stages.
pub fn gbdt_feature_gain(model: &TrainedModel) -> Result<Vec<f64>, FitError> {
    match (&model.kind, &model.body) {
        (ClassifierKind::Gbdt, ModelBody::Gbdt(m)) => Ok(m.feature_gain(model.n_features)),
        (ClassifierKind::Gbdt, _) => Ok(vec![0.0; model.n_features]),
        (k, _) => Err(FitError::WrongKind {
            expected: "GBDT",
            found: *k,
        }),
    }
}

/// Mean impurity decrease per feature, normalized to sum 1 (all zeros when
/// no tree split). Accepts RF and ET models.
pub fn rf_feature_importance(model: &TrainedModel) -> Result<Vec<f64>, FitError> {
    match (&model.kind, &model.body) {
        (ClassifierKind::Rf | ClassifierKind::Et, ModelBody::Forest(f)) => {
            Ok(f.feature_importance(model.n_features))
        }
        (ClassifierKind::Rf | ClassifierKind::Et, _) => Ok(vec![0.0; model.n_features]),
        (k, _) => Err(FitError::WrongKind {
            expected: "RF",
            found: *k,
        }),
    }
}

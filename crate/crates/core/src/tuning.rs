//! Seeded random search over per-classifier hyperparameter spaces.

use std::time::Instant;

use ndarray::ArrayView2;
use rayon::prelude::*;
use thiserror::Error;

use crate::classifiers::{fit, predict, ClassifierKind, HyperParams, ParamValue};
use crate::evaluation::{confusion, metrics};
use crate::rng::{member_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// Inclusive on both ends.
    IntRange {
        lo: i64,
        hi: i64,
    },
    Categorical(Vec<ParamValue>),
}

impl Distribution {
    /// Draws one value using exactly one generator call.
    pub fn sample(&self, rng: &mut Rng) -> ParamValue {
        match self {
            Distribution::Uniform { lo, hi } => ParamValue::Float(lo + rng.uniform() * (hi - lo)),
            Distribution::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                ParamValue::Float((a + rng.uniform() * (b - a)).exp().clamp(*lo, *hi))
            }
            Distribution::IntRange { lo, hi } => {
                ParamValue::Int(lo + rng.below((hi - lo) as usize + 1) as i64)
            }
            Distribution::Categorical(opts) => opts[rng.below(opts.len())].clone(),
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Distribution::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => {
                Ok(())
            }
            Distribution::LogUniform { lo, hi }
                if lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo < hi =>
            {
                Ok(())
            }
            Distribution::IntRange { lo, hi } if lo <= hi => Ok(()),
            Distribution::Categorical(opts) if !opts.is_empty() => Ok(()),
            other => Err(format!("invalid distribution {other:?}")),
        }
    }
}

/// Parameters are sampled in declaration order, one draw each, so a search
/// with a larger budget evaluates a superset of a smaller one's points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    pub params: Vec<(String, Distribution)>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, dist: Distribution) -> Self {
        self.params.push((name.to_string(), dist));
        self
    }

    pub fn sample(&self, rng: &mut Rng) -> HyperParams {
        let mut p = HyperParams::new();
        for (name, dist) in &self.params {
            p.set(name, dist.sample(rng));
        }
        p
    }
}

fn log(lo: f64, hi: f64) -> Distribution {
    Distribution::LogUniform { lo, hi }
}

fn ints(lo: i64, hi: i64) -> Distribution {
    Distribution::IntRange { lo, hi }
}

fn cat<T: Into<ParamValue>>(opts: impl IntoIterator<Item = T>) -> Distribution {
    Distribution::Categorical(opts.into_iter().map(Into::into).collect())
}

/// The fixed search space for each classifier.
pub fn default_space(kind: ClassifierKind) -> SearchSpace {
    let s = SearchSpace::new();
    match kind {
        ClassifierKind::Lr => s.with("C", log(1e-3, 1e3)),
        ClassifierKind::Knn => s
            .with("k", cat((1..=31).step_by(2).map(|k| k as i64)))
            .with("metric", cat(["euclidean", "manhattan"])),
        ClassifierKind::Svm => s
            .with("C", log(1e-2, 1e3))
            .with("kernel", cat(["linear", "rbf"]))
            .with("gamma", log(1e-4, 1.0)),
        ClassifierKind::Mlp => s
            .with("hidden", ints(32, 512))
            .with("lr", log(1e-4, 1e-1))
            .with("max_epochs", cat([200i64]))
            .with("patience", cat([20i64])),
        ClassifierKind::Rf | ClassifierKind::Et => s
            .with("n_trees", ints(100, 500))
            .with(
                "max_depth",
                Distribution::Categorical(vec![
                    ParamValue::Int(8),
                    ParamValue::Int(16),
                    ParamValue::Int(24),
                    ParamValue::Int(32),
                    ParamValue::Str("none".into()),
                ]),
            )
            .with("min_leaf", ints(1, 8)),
        ClassifierKind::Gbdt => s
            .with("n_trees", ints(100, 500))
            .with("leaves", ints(15, 63))
            .with("lr", log(0.01, 0.3)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Accuracy,
    MacroF1,
}

#[derive(Debug, Error, PartialEq)]
pub enum TuningError {
    #[error("search budget must be at least 1")]
    ZeroBudget,
    #[error("search space: {0}")]
    BadSpace(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub params: HyperParams,
    /// Validation score under the search objective; 0 when the fit failed.
    pub val_score: f64,
    pub fit_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: HyperParams,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

impl SearchOutcome {
    pub fn best_record(&self) -> &TrialRecord {
        &self.trials[self.best_trial]
    }
}

/// Fit seed used by trial `i` of a search seeded with `seed`.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    member_seed(seed, "trial", i)
}

fn score(objective: Objective, y: &[usize], pred: &[usize], k: usize) -> Result<f64, String> {
    let cm = confusion(y, pred, k).map_err(|e| e.to_string())?;
    let m = metrics(&cm).map_err(|e| e.to_string())?;
    Ok(match objective {
        Objective::Accuracy => m.accuracy,
        Objective::MacroF1 => m.f1_macro,
    })
}

/// Samples `budget` points from `space` (all drawn up front from `seed`, so
/// the parallel schedule cannot change them), fits each on the training
/// slice with its own trial seed and scores it on the validation slice.
/// The best trial is the highest score, earliest on ties. A failed fit scores
/// 0 and carries its error message instead of aborting the search.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    kind: ClassifierKind,
    space: &SearchSpace,
    budget: usize,
    x_train: ArrayView2<'_, f64>,
    y_train: &[usize],
    x_val: ArrayView2<'_, f64>,
    y_val: &[usize],
    n_classes: usize,
    seed: u64,
    objective: Objective,
) -> Result<SearchOutcome, TuningError> {
    if budget == 0 {
        return Err(TuningError::ZeroBudget);
    }
    for (name, d) in &space.params {
        d.check()
            .map_err(|e| TuningError::BadSpace(format!("{name}: {e}")))?;
    }
    let mut rng = Rng::new(seed);
    let points: Vec<HyperParams> = (0..budget).map(|_| space.sample(&mut rng)).collect();
    let trials: Vec<TrialRecord> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, params)| {
            let s = trial_seed(seed, i);
            let start = Instant::now();
            let result = fit(kind, x_train, y_train, n_classes, &params, s)
                .map_err(|e| e.to_string())
                .and_then(|m| predict(&m, x_val).map_err(|e| e.to_string()))
                .and_then(|pred| score(objective, y_val, &pred, n_classes));
            let fit_seconds = start.elapsed().as_secs_f64();
            let (val_score, error) = match result {
                Ok(v) => (v, None),
                Err(e) => (0.0, Some(e)),
            };
            TrialRecord {
                trial: i,
                seed: s,
                params,
                val_score,
                fit_seconds,
                error,
            }
        })
        .collect();
    let mut best = 0;
    for t in &trials {
        if t.val_score > trials[best].val_score {
            best = t.trial;
        }
    }
    Ok(SearchOutcome {
        best: trials[best].params.clone(),
        best_trial: best,
        trials,
    })
}

pub const TRIAL_CSV_HEADER: &str = "trial,seed,params_json,val_accuracy,fit_seconds";

/// Trial log; the score column holds the search objective's value.
pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIAL_CSV_HEADER.split(','))
        .expect("in-memory write");
    for t in trials {
        w.write_record([
            t.trial.to_string(),
            t.seed.to_string(),
            t.params.to_json(),
            format!("{:.6}", t.val_score),
            format!("{:.3}", t.fit_seconds),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

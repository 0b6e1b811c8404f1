use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ClassifierKind, FitError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(v) => f.write_str(v),
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

/// Named hyperparameters; keys are kept sorted so serialization is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperParams(pub BTreeMap<String, ParamValue>);

impl HyperParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<ParamValue>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.0.get(key)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    /// Float strictly above the bound.
    FloatAbove(f64),
    /// Float at or above the bound.
    FloatAtLeast(f64),
    IntIn(i64, i64),
    /// Integer in range, or the string "none".
    IntInOrNone(i64, i64),
    OneOf(&'static [&'static str]),
    /// Integer in range, or one of the listed strings.
    IntInOrOneOf(i64, i64, &'static [&'static str]),
}

fn rules(kind: ClassifierKind) -> &'static [(&'static str, Rule)] {
    use ClassifierKind::*;
    use Rule::*;
    match kind {
        Lr => &[
            ("C", FloatAbove(0.0)),
            ("max_iter", IntIn(1, 1_000_000)),
            ("tol", FloatAbove(0.0)),
        ],
        Knn => &[
            ("k", IntIn(1, 100_000)),
            ("metric", OneOf(&["euclidean", "manhattan"])),
        ],
        Svm => &[
            ("C", FloatAbove(0.0)),
            ("kernel", OneOf(&["linear", "rbf"])),
            ("gamma", FloatAbove(0.0)),
            ("tol", FloatAbove(0.0)),
            ("max_passes", IntIn(1, 1_000_000)),
        ],
        Mlp => &[
            ("hidden", IntIn(1, 8192)),
            ("lr", FloatAbove(0.0)),
            ("max_epochs", IntIn(1, 200)),
            ("patience", IntIn(1, 200)),
            ("batch_size", IntIn(1, 1_000_000)),
            ("alpha", FloatAtLeast(0.0)),
        ],
        Rf | Et => &[
            ("n_trees", IntIn(1, 100_000)),
            ("max_depth", IntInOrNone(1, 10_000)),
            ("min_leaf", IntIn(1, 1_000_000)),
            ("max_features", IntInOrOneOf(1, 1_000_000, &["sqrt", "all"])),
        ],
        Gbdt => &[
            ("n_trees", IntIn(0, 100_000)),
            ("leaves", IntIn(2, 100_000)),
            ("lr", FloatAbove(0.0)),
            ("min_leaf", IntIn(1, 1_000_000)),
            ("l2", FloatAtLeast(0.0)),
            ("bins", IntIn(2, 256)),
        ],
    }
}

fn check(rule: Rule, v: &ParamValue) -> Result<(), String> {
    let as_float = |v: &ParamValue| match v {
        ParamValue::Float(f) => Some(*f),
        ParamValue::Int(i) => Some(*i as f64),
        ParamValue::Str(_) => None,
    };
    match (rule, v) {
        (Rule::FloatAbove(lo), v) => match as_float(v) {
            Some(f) if f.is_finite() && f > lo => Ok(()),
            _ => Err(format!("must be a finite number > {lo}")),
        },
        (Rule::FloatAtLeast(lo), v) => match as_float(v) {
            Some(f) if f.is_finite() && f >= lo => Ok(()),
            _ => Err(format!("must be a finite number >= {lo}")),
        },
        (
            Rule::IntIn(lo, hi) | Rule::IntInOrNone(lo, hi) | Rule::IntInOrOneOf(lo, hi, _),
            ParamValue::Int(i),
        ) if (lo..=hi).contains(i) => Ok(()),
        (Rule::IntInOrNone(..), ParamValue::Str(s)) if s == "none" => Ok(()),
        (Rule::OneOf(opts) | Rule::IntInOrOneOf(_, _, opts), ParamValue::Str(s))
            if opts.contains(&s.as_str()) =>
        {
            Ok(())
        }
        (Rule::IntIn(lo, hi), _) => Err(format!("must be an integer in [{lo}, {hi}]")),
        (Rule::IntInOrNone(lo, hi), _) => {
            Err(format!("must be an integer in [{lo}, {hi}] or \"none\""))
        }
        (Rule::OneOf(opts), _) => Err(format!("must be one of {opts:?}")),
        (Rule::IntInOrOneOf(lo, hi, opts), _) => Err(format!(
            "must be an integer in [{lo}, {hi}] or one of {opts:?}"
        )),
    }
}

/// Rejects keys not legal for `kind` and values outside their declared ranges.
pub fn validate(kind: ClassifierKind, params: &HyperParams) -> Result<(), FitError> {
    let table = rules(kind);
    for (key, value) in &params.0 {
        let rule = table
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, r)| *r)
            .ok_or_else(|| FitError::InvalidParam {
                kind,
                key: key.clone(),
                reason: "not a parameter of this classifier".into(),
            })?;
        check(rule, value).map_err(|reason| FitError::InvalidParam {
            kind,
            key: key.clone(),
            reason,
        })?;
    }
    Ok(())
}

/// Typed accessors with defaults; call after [`validate`].
pub(crate) struct Getter<'a>(pub &'a HyperParams);

impl Getter<'_> {
    pub fn float(&self, key: &str, default: f64) -> f64 {
        match self.0.get(key) {
            Some(ParamValue::Float(f)) => *f,
            Some(ParamValue::Int(i)) => *i as f64,
            _ => default,
        }
    }

    pub fn int(&self, key: &str, default: usize) -> usize {
        match self.0.get(key) {
            Some(ParamValue::Int(i)) => *i as usize,
            _ => default,
        }
    }

    pub fn str<'b>(&'b self, key: &str, default: &'b str) -> &'b str {
        match self.0.get(key) {
            Some(ParamValue::Str(s)) => s,
            _ => default,
        }
    }

    /// `Some(n)` for an integer, `None` for "none" or absent.
    pub fn opt_int(&self, key: &str) -> Option<usize> {
        match self.0.get(key) {
            Some(ParamValue::Int(i)) => Some(*i as usize),
            _ => None,
        }
    }
}

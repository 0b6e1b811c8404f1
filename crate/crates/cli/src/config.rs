//! Experiment configuration: a flat `key = value` file with section headers.
//!
//! ```text
//! # comment
//! seed = 42                      # global section, before any header
//! [data]
//! manifest = features/manifest.json
//! feature_set = swin_tiny-high   # optional; defaults to the manifest's backbone-stage tag
//! [split]
//! ratios = 0.64, 0.16, 0.20
//! [models]
//! classifiers = LR, KNN, SVM, MLP, RF, ET, GBDT
//! standardize = LR, KNN, SVM, MLP
//! [selection]
//! methods = gbdt, rf, lasso
//! fractions = 0.5, 0.4, 0.3, 0.2, 0.1, 0.05
//! [tuning]
//! budget = 30
//! objective = accuracy           # or macro_f1
//! [output]
//! dir = runs/default
//! ```
//!
//! Only `seed` and `manifest` are required. Relative paths resolve against
//! the config file's directory. Unknown sections or keys and repeated keys
//! are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deepfeat_core::classifiers::ClassifierKind;
use deepfeat_core::feature_selection::SelectorMethod;
use deepfeat_core::tuning::Objective;
use thiserror::Error;

/// Environment variable that overrides `[output] dir`.
pub const OUT_ENV: &str = "DEEPFEAT_OUT";

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
pub const DEFAULT_BUDGET: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("[{section}] {key}: {reason}")]
    Value {
        section: String,
        key: String,
        reason: String,
    },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("cannot read config {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub feature_set: Option<String>,
    pub ratios: (f64, f64, f64),
    pub classifiers: Vec<ClassifierKind>,
    pub standardize: Vec<ClassifierKind>,
    pub selectors: Vec<SelectorMethod>,
    pub fractions: Vec<f64>,
    pub budget: usize,
    pub objective: Objective,
    pub out_dir: PathBuf,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["seed"]),
    ("data", &["manifest", "feature_set"]),
    ("split", &["ratios"]),
    ("models", &["classifiers", "standardize"]),
    ("selection", &["methods", "fractions"]),
    ("tuning", &["budget", "objective"]),
    ("output", &["dir"]),
];

type Entries = BTreeMap<(String, String), (usize, String)>;

fn parse_entries(text: &str) -> Result<Entries, ConfigError> {
    let mut section = String::new();
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |reason: String| ConfigError::Syntax {
            line: line_no,
            reason,
        };
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax("unterminated section header".into()))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) || name.is_empty() {
                return Err(syntax(format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        let allowed = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            let place = if section.is_empty() {
                "the global section".to_string()
            } else {
                format!("[{section}]")
            };
            return Err(syntax(format!("unknown key {key:?} in {place}")));
        }
        if out
            .insert(
                (section.clone(), key.to_string()),
                (line_no, value.trim().to_string()),
            )
            .is_some()
        {
            return Err(syntax(format!("key {key:?} repeated")));
        }
    }
    Ok(out)
}

fn list(value: &str) -> Vec<&str> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_fractions(value: &str) -> Result<Vec<f64>, String> {
    let items = list(value);
    if items.is_empty() {
        return Err("fraction list is empty".into());
    }
    let mut out: Vec<f64> = Vec::new();
    for s in items {
        let p: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(format!("fraction {p} is outside (0, 1]"));
        }
        if out.contains(&p) {
            return Err(format!("fraction {p} listed twice"));
        }
        out.push(p);
    }
    Ok(out)
}

fn parse_names<T: FromStr<Err = String> + PartialEq>(value: &str) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for s in list(value) {
        let v = T::from_str(s)?;
        if out.contains(&v) {
            return Err(format!("{s:?} listed twice"));
        }
        out.push(v);
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let get = |section: &str, key: &str| {
            entries
                .get(&(section.to_string(), key.to_string()))
                .map(|(_, v)| v.as_str())
        };
        let bad = |section: &str, key: &str, reason: String| ConfigError::Value {
            section: if section.is_empty() {
                "global".into()
            } else {
                section.into()
            },
            key: key.into(),
            reason,
        };

        let seed = get("", "seed").ok_or(ConfigError::Missing("seed"))?;
        let seed: u64 = seed.parse().map_err(|_| {
            bad(
                "",
                "seed",
                format!("not an unsigned 64-bit integer: {seed:?}"),
            )
        })?;

        let manifest = get("data", "manifest").ok_or(ConfigError::Missing("[data] manifest"))?;
        let manifest = base_dir.join(manifest);
        let feature_set = match get("data", "feature_set") {
            Some(s) if s.is_empty() || s.contains([',', '/', '\\']) => {
                return Err(bad(
                    "data",
                    "feature_set",
                    "must be non-empty without ',', '/' or '\\'".into(),
                ))
            }
            other => other.map(str::to_string),
        };

        let ratios = match get("split", "ratios") {
            None => deepfeat_core::dataset::DEFAULT_RATIOS,
            Some(v) => {
                let parts: Result<Vec<f64>, _> = list(v).iter().map(|s| s.parse::<f64>()).collect();
                match parts.as_deref() {
                    Ok([a, b, c])
                        if *a > 0.0
                            && *b > 0.0
                            && *c > 0.0
                            && ((a + b + c) - 1.0).abs() <= 1e-9 =>
                    {
                        (*a, *b, *c)
                    }
                    _ => {
                        return Err(bad(
                            "split",
                            "ratios",
                            format!("need three positive numbers summing to 1, got {v:?}"),
                        ))
                    }
                }
            }
        };

        let classifiers = match get("models", "classifiers") {
            None => ClassifierKind::ALL.to_vec(),
            Some(v) => parse_names(v).map_err(|e| bad("models", "classifiers", e))?,
        };
        if classifiers.is_empty() {
            return Err(bad("models", "classifiers", "list is empty".into()));
        }
        let standardize = match get("models", "standardize") {
            None => ClassifierKind::ALL
                .into_iter()
                .filter(|k| k.requires_standardization())
                .collect(),
            Some(v) => parse_names(v).map_err(|e| bad("models", "standardize", e))?,
        };

        let selectors = match get("selection", "methods") {
            None => SelectorMethod::ALL.to_vec(),
            Some(v) => parse_names(v).map_err(|e| bad("selection", "methods", e))?,
        };
        let fractions = match get("selection", "fractions") {
            None => DEFAULT_FRACTIONS.to_vec(),
            Some(v) => parse_fractions(v).map_err(|e| bad("selection", "fractions", e))?,
        };

        let budget = match get("tuning", "budget") {
            None => DEFAULT_BUDGET,
            Some(v) => match v.parse::<usize>() {
                Ok(b) if b >= 1 => b,
                _ => {
                    return Err(bad(
                        "tuning",
                        "budget",
                        format!("need an integer >= 1, got {v:?}"),
                    ))
                }
            },
        };
        let objective = match get("tuning", "objective") {
            None | Some("accuracy") => Objective::Accuracy,
            Some("macro_f1") => Objective::MacroF1,
            Some(v) => {
                return Err(bad(
                    "tuning",
                    "objective",
                    format!("expected accuracy or macro_f1, got {v:?}"),
                ))
            }
        };

        let out_dir = base_dir.join(get("output", "dir").unwrap_or("runs/default"));

        Ok(Self {
            seed,
            manifest,
            feature_set,
            ratios,
            classifiers,
            standardize,
            selectors,
            fractions,
            budget,
            objective,
            out_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    pub fn standardizes(&self, kind: ClassifierKind) -> bool {
        self.standardize.contains(&kind)
    }

    /// Every setting that can influence an output byte, one `key=value` per
    /// line in a fixed order. The manifest path and output directory are left
    /// out; the manifest's bytes are hashed separately.
    pub fn canonical(&self) -> String {
        let names = |v: &[ClassifierKind]| v.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
        let floats = |v: &[f64]| {
            v.iter()
                .map(|p| format!("{p:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "seed={}\nfeature_set={}\nratios={:?},{:?},{:?}\nclassifiers={}\nstandardize={}\nmethods={}\nfractions={}\nbudget={}\nobjective={}\n",
            self.seed,
            self.feature_set.as_deref().unwrap_or(""),
            self.ratios.0,
            self.ratios.1,
            self.ratios.2,
            names(&self.classifiers),
            names(&self.standardize),
            self.selectors.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
            floats(&self.fractions),
            self.budget,
            match self.objective {
                Objective::Accuracy => "accuracy",
                Objective::MacroF1 => "macro_f1",
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# mini run
seed = 7
[data]
manifest = data/manifest.json
feature_set = mini
[split]
ratios = 0.6, 0.2, 0.2
[models]
classifiers = lr, ANN, LGBM
standardize = LR
[selection]
methods = rf
fractions = 0.5, 0.25
[tuning]
budget = 3
objective = macro_f1
[output]
dir = out
";

    #[test]
    fn parses_every_key() {
        let c = ExperimentConfig::parse(FULL, Path::new("/cfg")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.manifest, PathBuf::from("/cfg/data/manifest.json"));
        assert_eq!(c.feature_set.as_deref(), Some("mini"));
        assert_eq!(c.ratios, (0.6, 0.2, 0.2));
        assert_eq!(
            c.classifiers,
            vec![
                ClassifierKind::Lr,
                ClassifierKind::Mlp,
                ClassifierKind::Gbdt
            ]
        );
        assert_eq!(c.standardize, vec![ClassifierKind::Lr]);
        assert_eq!(c.selectors, vec![SelectorMethod::Rf]);
        assert_eq!(c.fractions, vec![0.5, 0.25]);
        assert_eq!(c.budget, 3);
        assert_eq!(c.objective, Objective::MacroF1);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn defaults() {
        let c =
            ExperimentConfig::parse("seed=1\n[data]\nmanifest=m.json\n", Path::new("")).unwrap();
        assert_eq!(c.ratios, (0.64, 0.16, 0.20));
        assert_eq!(c.classifiers.len(), 7);
        assert_eq!(c.standardize.len(), 4);
        assert!(!c.standardizes(ClassifierKind::Rf));
        assert_eq!(c.selectors.len(), 3);
        assert_eq!(c.fractions, DEFAULT_FRACTIONS.to_vec());
        assert_eq!(c.budget, 30);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new("");
        let err = |t: &str| ExperimentConfig::parse(t, base).unwrap_err();
        assert_eq!(err("[data]\nmanifest=m\n"), ConfigError::Missing("seed"));
        assert_eq!(err("seed=1\n"), ConfigError::Missing("[data] manifest"));
        assert!(matches!(
            err("seed=1\n[nope]\n"),
            ConfigError::Syntax { line: 2, .. }
        ));
        assert!(matches!(
            err("seed=1\nseed=2\n"),
            ConfigError::Syntax { line: 2, .. }
        ));
        assert!(matches!(
            err("seed=1\n[data]\nmanifest=m\ncolor=red\n"),
            ConfigError::Syntax { line: 4, .. }
        ));
        assert!(matches!(
            err("seed=-1\n[data]\nmanifest=m\n"),
            ConfigError::Value { .. }
        ));
        assert!(matches!(
            err("seed=1\n[data]\nmanifest=m\n[split]\nratios=0.5,0.5\n"),
            ConfigError::Value { .. }
        ));
        assert!(matches!(
            err("seed=1\n[data]\nmanifest=m\n[selection]\nfractions=0.5,1.5\n"),
            ConfigError::Value { .. }
        ));
        assert!(matches!(
            err("seed=1\n[data]\nmanifest=m\n[models]\nclassifiers=LR,XGB\n"),
            ConfigError::Value { .. }
        ));
        assert!(matches!(
            err("seed=1\n[data]\nmanifest=m\n[tuning]\nbudget=0\n"),
            ConfigError::Value { .. }
        ));
        assert!(matches!(err("seed\n"), ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn canonical_ignores_paths_but_not_settings() {
        let a = ExperimentConfig::parse(FULL, Path::new("/a")).unwrap();
        let mut b = ExperimentConfig::parse(FULL, Path::new("/b")).unwrap();
        assert_eq!(a.canonical(), b.canonical());
        b.fractions = vec![0.25, 0.5];
        assert_ne!(a.canonical(), b.canonical());
    }
}

//! Stage runner. Each stage writes its outputs under `<out>/<stage>/`, then a
//! `stage.json` record carrying a fingerprint that chains the fingerprints of
//! its prerequisites with the settings it reads. A stage whose record matches
//! the current fingerprint is skipped; one that was produced under different
//! settings is refused rather than mixed with the new run.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepfeat_core::classifiers::serialize::write_model;
use deepfeat_core::classifiers::{fit, predict, ClassifierKind, HyperParams};
use deepfeat_core::dataset::{
    select_rows, standardize_apply, standardize_fit, stratified_split, LabelVector, SplitIndices,
};
use deepfeat_core::evaluation::{
    build_report, confusion, confusion_csv, impact_csv, metrics, render_tables, report_csv,
    ReportCell,
};
use deepfeat_core::feature_selection::{
    apply_subset, gbdt_selector_params, parse_ranking_csv, rank_by_gbdt, rank_by_lasso, rank_by_rf,
    ranking_csv, rf_selector_params, select_lasso, select_top_fraction, ImportanceRanking,
    LassoParams, SelectorMethod,
};
use deepfeat_core::pooling::pool_dataset;
use deepfeat_core::rng::derive_seed;
use deepfeat_core::tensor_io::{load_manifest, read_array, write_array, Tensor};
use deepfeat_core::tuning::{default_space, random_search, trials_csv};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Split,
    Train,
    Select,
    Sweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Split,
        Stage::Train,
        Stage::Select,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Select => "select",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Split => &[Stage::Ingest],
            Stage::Train | Stage::Select => &[Stage::Split],
            Stage::Sweep => &[Stage::Train, Stage::Select],
            Stage::Report => &[Stage::Sweep],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` in {dir} was produced with a different configuration (recorded {recorded}, current {current}); use a fresh output directory or delete that stage's outputs")]
    Mismatch {
        stage: Stage,
        dir: PathBuf,
        recorded: String,
        current: String,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("stage `{stage}` needs `{missing}` to be completed first")]
    Prerequisite { stage: Stage, missing: Stage },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 2 config, 3 data, 4 missing prerequisite.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Mismatch { .. } => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } => 3,
            PipelineError::Prerequisite { .. } => 4,
        }
    }
}

fn data_err(context: &str) -> impl Fn(String) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{context}: {e}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Short stable identifier of a column subset of a width-`d` matrix.
pub fn subset_digest(d: usize, subset: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update((d as u32).to_le_bytes());
    for &j in subset {
        h.update((j as u32).to_le_bytes());
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    stage: String,
    fingerprint: String,
    /// Paths relative to the output directory.
    artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerStage {
    pub fingerprint: String,
    pub seconds: f64,
    pub artifacts: Vec<String>,
}

/// `ledger.json` at the root of the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, LedgerStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleInfo {
    feature_set: String,
    class_names: Vec<String>,
    sample_ids: Vec<String>,
}

struct Store {
    x: Array2<f64>,
    y: Vec<usize>,
    info: SampleInfo,
}

/// Train/validation/test slices of the pooled matrix.
struct Holdout {
    x: [Array2<f64>; 3],
    y: [Vec<usize>; 3],
    k: usize,
    d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedCell {
    key: String,
    best_params: HyperParams,
    cell: ReportCell,
}

struct CellOutput {
    cached: CachedCell,
    model: Vec<u8>,
    trials: String,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    manifest_hash: String,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(&cfg.manifest).map_err(|e| {
            PipelineError::Data(format!(
                "cannot read manifest {}: {e}",
                cfg.manifest.display()
            ))
        })?;
        Ok(Self {
            out: cfg.out_dir.clone(),
            manifest_hash: sha_hex(&[&bytes]),
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn config_hash(&self) -> String {
        sha_hex(&[
            self.manifest_hash.as_bytes(),
            self.cfg.canonical().as_bytes(),
        ])
    }

    pub fn fingerprint(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let names = |v: &[ClassifierKind]| v.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
        let own = match stage {
            Stage::Ingest => format!(
                "manifest={}\nfeature_set={:?}",
                self.manifest_hash, c.feature_set
            ),
            Stage::Split => format!("seed={}\nratios={:?}", c.seed, c.ratios),
            Stage::Train => format!(
                "classifiers={}\nstandardize={}\nbudget={}\nobjective={:?}",
                names(&c.classifiers),
                names(&c.standardize),
                c.budget,
                c.objective
            ),
            Stage::Select => format!(
                "methods={}",
                c.selectors
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            Stage::Sweep => format!("fractions={:?}", c.fractions),
            Stage::Report => String::new(),
        };
        let mut parts: Vec<String> = stage
            .prerequisites()
            .iter()
            .map(|p| self.fingerprint(*p))
            .collect();
        parts.push(stage.name().to_string());
        parts.push(own);
        let refs: Vec<&[u8]> = parts.iter().map(|s| s.as_bytes()).collect();
        sha_hex(&refs)
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn record(&self, stage: Stage) -> Result<Option<StageRecord>, PipelineError> {
        let path = self.stage_dir(stage).join("stage.json");
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn complete(&self, rec: &StageRecord) -> bool {
        rec.artifacts.iter().all(|a| self.out.join(a).is_file())
    }

    fn require(&self, stage: Stage, by: Stage) -> Result<(), PipelineError> {
        match self.record(stage)? {
            Some(rec) if rec.fingerprint != self.fingerprint(stage) => {
                Err(self.mismatch(stage, rec.fingerprint))
            }
            Some(rec) if self.complete(&rec) => Ok(()),
            _ => Err(PipelineError::Prerequisite {
                stage: by,
                missing: stage,
            }),
        }
    }

    fn mismatch(&self, stage: Stage, recorded: String) -> PipelineError {
        PipelineError::Mismatch {
            stage,
            dir: self.stage_dir(stage),
            recorded,
            current: self.fingerprint(stage),
        }
    }

    /// Runs one stage if its outputs are missing.
    pub fn run(&self, stage: Stage) -> Result<StageStatus, PipelineError> {
        for p in stage.prerequisites() {
            self.require(*p, stage)?;
        }
        let fingerprint = self.fingerprint(stage);
        if let Some(rec) = self.record(stage)? {
            if rec.fingerprint != fingerprint {
                return Err(self.mismatch(stage, rec.fingerprint));
            }
            if self.complete(&rec) {
                return Ok(StageStatus::UpToDate);
            }
        }
        let start = Instant::now();
        let mut artifacts = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Split => self.split()?,
            Stage::Train => self.train()?,
            Stage::Select => self.select()?,
            Stage::Sweep => self.sweep()?,
            Stage::Report => self.report()?,
        };
        let seconds = start.elapsed().as_secs_f64();
        artifacts.sort();
        let rec = StageRecord {
            stage: stage.name().into(),
            fingerprint: fingerprint.clone(),
            artifacts: artifacts.clone(),
        };
        let rec_path = self.stage_dir(stage).join("stage.json");
        write_atomic(&rec_path, &json_bytes(&rec))?;
        self.update_ledger(
            stage,
            LedgerStage {
                fingerprint,
                seconds,
                artifacts,
            },
        )?;
        Ok(StageStatus::Ran)
    }

    /// Runs every stage in order, skipping completed ones.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>, PipelineError> {
        Stage::ALL
            .iter()
            .map(|&s| self.run(s).map(|st| (s, st)))
            .collect()
    }

    pub fn read_ledger(&self) -> Option<RunLedger> {
        let bytes = std::fs::read(self.out.join("ledger.json")).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn update_ledger(&self, stage: Stage, entry: LedgerStage) -> Result<(), PipelineError> {
        let mut ledger = self.read_ledger().unwrap_or_default();
        ledger.config_hash = self.config_hash();
        ledger.seed = self.cfg.seed;
        ledger.versions = BTreeMap::from([
            (
                "deepfeat-cli".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
            (
                "deepfeat-core".to_string(),
                deepfeat_core::VERSION.to_string(),
            ),
            (
                "model-format".to_string(),
                deepfeat_core::classifiers::serialize::FORMAT_VERSION.to_string(),
            ),
        ]);
        ledger.stages.insert(stage.name().to_string(), entry);
        write_atomic(&self.out.join("ledger.json"), &json_bytes(&ledger))
    }

    fn write(
        &self,
        rel: &str,
        bytes: &[u8],
        artifacts: &mut Vec<String>,
    ) -> Result<(), PipelineError> {
        write_atomic(&self.out.join(rel), bytes)?;
        artifacts.push(rel.to_string());
        Ok(())
    }

    fn read(&self, rel: &str, needed: Stage, by: Stage) -> Result<Vec<u8>, PipelineError> {
        let path = self.out.join(rel);
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::Prerequisite {
                stage: by,
                missing: needed,
            },
            _ => io_err(&path)(e),
        })
    }

    // -- ingest -------------------------------------------------------------

    fn ingest(&self) -> Result<Vec<String>, PipelineError> {
        let manifest =
            load_manifest(&self.cfg.manifest).map_err(|e| data_err("manifest")(e.to_string()))?;
        let (x, labels) =
            pool_dataset(&manifest).map_err(|e| data_err("pooling")(e.to_string()))?;
        let feature_set = match &self.cfg.feature_set {
            Some(f) => f.clone(),
            None => {
                let e = &manifest.entries[0];
                format!("{}-{}", e.backbone, e.stage).replace([',', '/', '\\'], "_")
            }
        };
        let (n, d) = (x.rows(), x.cols());
        let features = Tensor::from_f64(vec![n, d], x.values().iter().copied().collect())
            .expect("shape matches");
        let label_tensor =
            Tensor::from_i64(vec![n], labels.labels().iter().map(|&l| l as i64).collect())
                .expect("shape matches");
        let info = SampleInfo {
            feature_set,
            class_names: labels.class_names().to_vec(),
            sample_ids: x.sample_ids().to_vec(),
        };
        let mut artifacts = Vec::new();
        self.write(
            "ingest/features.npy",
            &write_array(&features),
            &mut artifacts,
        )?;
        self.write(
            "ingest/labels.npy",
            &write_array(&label_tensor),
            &mut artifacts,
        )?;
        self.write("ingest/samples.json", &json_bytes(&info), &mut artifacts)?;
        Ok(artifacts)
    }

    fn load_store(&self, by: Stage) -> Result<Store, PipelineError> {
        let read_npy = |rel: &str| {
            read_array(&self.read(rel, Stage::Ingest, by)?)
                .map_err(|e| data_err(rel)(e.to_string()))
        };
        let xt = read_npy("ingest/features.npy")?;
        let yt = read_npy("ingest/labels.npy")?;
        let info: SampleInfo =
            serde_json::from_slice(&self.read("ingest/samples.json", Stage::Ingest, by)?)
                .map_err(|e| data_err("ingest/samples.json")(e.to_string()))?;
        let (n, d) = match xt.shape() {
            [n, d] => (*n, *d),
            other => {
                return Err(PipelineError::Data(format!(
                    "ingest/features.npy has shape {other:?}"
                )))
            }
        };
        let x = Array2::from_shape_vec((n, d), xt.to_f64_vec()).expect("shape checked");
        let y: Vec<usize> = yt.to_f64_vec().into_iter().map(|v| v as usize).collect();
        if y.len() != n || y.iter().any(|&l| l >= info.class_names.len()) {
            return Err(PipelineError::Data(
                "ingest/labels.npy does not match the feature matrix".into(),
            ));
        }
        Ok(Store { x, y, info })
    }

    // -- split --------------------------------------------------------------

    fn split(&self) -> Result<Vec<String>, PipelineError> {
        let store = self.load_store(Stage::Split)?;
        let labels = LabelVector::new(store.y, store.info.class_names)
            .map_err(|e| data_err("labels")(e.to_string()))?;
        let seed = derive_seed(self.cfg.seed, "split", "holdout");
        let split = stratified_split(&labels, self.cfg.ratios, seed)
            .map_err(|e| data_err("split")(e.to_string()))?;
        let mut artifacts = Vec::new();
        self.write("split/split.json", &json_bytes(&split), &mut artifacts)?;
        Ok(artifacts)
    }

    fn load_holdout(&self, by: Stage) -> Result<(Holdout, SampleInfo), PipelineError> {
        let store = self.load_store(by)?;
        let split: SplitIndices =
            serde_json::from_slice(&self.read("split/split.json", Stage::Split, by)?)
                .map_err(|e| data_err("split/split.json")(e.to_string()))?;
        let n = store.y.len();
        if [&split.train, &split.val, &split.test]
            .iter()
            .any(|v| v.iter().any(|&i| i >= n))
        {
            return Err(PipelineError::Data(
                "split indices exceed the sample count".into(),
            ));
        }
        let pick = |idx: &[usize]| {
            (
                select_rows(&store.x, idx),
                idx.iter().map(|&i| store.y[i]).collect::<Vec<_>>(),
            )
        };
        let (xa, ya) = pick(&split.train);
        let (xb, yb) = pick(&split.val);
        let (xc, yc) = pick(&split.test);
        let holdout = Holdout {
            x: [xa, xb, xc],
            y: [ya, yb, yc],
            k: store.info.class_names.len(),
            d: store.x.ncols(),
        };
        Ok((holdout, store.info))
    }

    // -- train / sweep cells -----------------------------------------------

    /// Identifies a cell computation independently of how it is labeled in
    /// the report, so sweep cells can be cached and reused.
    fn cell_key(&self, kind: ClassifierKind, digest: &str) -> String {
        sha_hex(&[
            self.fingerprint(Stage::Split).as_bytes(),
            kind.name().as_bytes(),
            digest.as_bytes(),
            format!(
                "{}:{:?}:{}",
                self.cfg.budget,
                self.cfg.objective,
                self.cfg.standardizes(kind)
            )
            .as_bytes(),
        ])
    }

    /// Tunes on train/validation, refits the best point on train, scores on test.
    fn evaluate(
        &self,
        h: &Holdout,
        feature_set: &str,
        kind: ClassifierKind,
        subset: &[usize],
    ) -> Result<CellOutput, PipelineError> {
        let digest = subset_digest(h.d, subset);
        let cell_id = format!("{}:{digest}", kind.name());
        let slice = |x: &Array2<f64>| -> Array2<f64> {
            if subset.len() == h.d {
                x.clone()
            } else {
                apply_subset(x.view(), subset).expect("subset indices validated")
            }
        };
        let mut xs: Vec<Array2<f64>> = h.x.iter().map(slice).collect();
        if self.cfg.standardizes(kind) {
            let s = standardize_fit(&xs[0]);
            xs = xs.iter().map(|x| standardize_apply(&s, x)).collect();
        }
        let context = |e: String| PipelineError::Data(format!("{cell_id}: {e}"));
        let search = random_search(
            kind,
            &default_space(kind),
            self.cfg.budget,
            xs[0].view(),
            &h.y[0],
            xs[1].view(),
            &h.y[1],
            h.k,
            derive_seed(self.cfg.seed, "tune", &cell_id),
            self.cfg.objective,
        )
        .map_err(|e| context(e.to_string()))?;
        let model = fit(
            kind,
            xs[0].view(),
            &h.y[0],
            h.k,
            &search.best,
            derive_seed(self.cfg.seed, "fit", &cell_id),
        )
        .map_err(|e| context(e.to_string()))?;
        let pred = predict(&model, xs[2].view()).map_err(|e| context(e.to_string()))?;
        let cm = confusion(&h.y[2], &pred, h.k).map_err(|e| context(e.to_string()))?;
        let m = metrics(&cm).map_err(|e| context(e.to_string()))?;
        Ok(CellOutput {
            cached: CachedCell {
                key: self.cell_key(kind, &digest),
                best_params: search.best.clone(),
                cell: ReportCell {
                    feature_set: feature_set.to_string(),
                    selector: None,
                    fraction: 1.0,
                    dimension: subset.len(),
                    classifier: kind.name().to_string(),
                    metrics: m,
                    confusion: cm,
                },
            },
            model: write_model(&model),
            trials: trials_csv(&search.trials),
        })
    }

    fn train(&self) -> Result<Vec<String>, PipelineError> {
        let (h, info) = self.load_holdout(Stage::Train)?;
        let full: Vec<usize> = (0..h.d).collect();
        let outputs: Vec<CellOutput> = self
            .cfg
            .classifiers
            .par_iter()
            .map(|&kind| self.evaluate(&h, &info.feature_set, kind, &full))
            .collect::<Result<_, _>>()?;
        let mut artifacts = Vec::new();
        for (kind, o) in self.cfg.classifiers.iter().zip(outputs) {
            let dir = format!("train/{}", kind.name());
            self.write(&format!("{dir}/model.dfom"), &o.model, &mut artifacts)?;
            self.write(
                &format!("{dir}/trials.csv"),
                o.trials.as_bytes(),
                &mut artifacts,
            )?;
            self.write(
                &format!("{dir}/cell.json"),
                &json_bytes(&o.cached),
                &mut artifacts,
            )?;
        }
        Ok(artifacts)
    }

    // -- select -------------------------------------------------------------

    fn select(&self) -> Result<Vec<String>, PipelineError> {
        let (h, _) = self.load_holdout(Stage::Select)?;
        let results: Vec<(ImportanceRanking, Option<String>)> = self
            .cfg
            .selectors
            .par_iter()
            .map(|&m| self.rank(&h, m))
            .collect::<Result<_, _>>()?;
        let mut artifacts = Vec::new();
        for (m, (ranking, extra)) in self.cfg.selectors.iter().zip(results) {
            self.write(
                &format!("select/{}/ranking.csv", m.name()),
                ranking_csv(&ranking).as_bytes(),
                &mut artifacts,
            )?;
            if let Some(extra) = extra {
                self.write(
                    &format!("select/{}/lambda.json", m.name()),
                    extra.as_bytes(),
                    &mut artifacts,
                )?;
            }
        }
        Ok(artifacts)
    }

    /// Rankings are computed on training rows only.
    fn rank(
        &self,
        h: &Holdout,
        method: SelectorMethod,
    ) -> Result<(ImportanceRanking, Option<String>), PipelineError> {
        let seed = derive_seed(self.cfg.seed, "select", method.name());
        let err = data_err(method.name());
        let (x, y) = (h.x[0].view(), &h.y[0]);
        match method {
            SelectorMethod::Gbdt => rank_by_gbdt(x, y, h.k, &gbdt_selector_params(), seed)
                .map(|r| (r, None))
                .map_err(|e| err(e.to_string())),
            SelectorMethod::Rf => rank_by_rf(x, y, h.k, &rf_selector_params(), seed)
                .map(|r| (r, None))
                .map_err(|e| err(e.to_string())),
            SelectorMethod::Lasso => {
                let s = standardize_fit(&h.x[0]);
                let (xt, xv) = (
                    standardize_apply(&s, &h.x[0]),
                    standardize_apply(&s, &h.x[1]),
                );
                if h.y[1].is_empty() {
                    let (r, _) = rank_by_lasso(xt.view(), y, h.k, &LassoParams::default())
                        .map_err(|e| err(e.to_string()))?;
                    return Ok((r, None));
                }
                let (r, choice) = select_lasso(
                    xt.view(),
                    y,
                    xv.view(),
                    &h.y[1],
                    h.k,
                    &LassoParams::default(),
                )
                .map_err(|e| err(e.to_string()))?;
                let grid: Vec<serde_json::Value> = choice
                    .trials
                    .iter()
                    .map(|(l, a)| serde_json::json!({"lambda": l, "val_accuracy": a}))
                    .collect();
                let doc = serde_json::json!({
                    "lambda": choice.lambda,
                    "converged": choice.converged,
                    "grid": grid,
                });
                Ok((
                    r,
                    Some(serde_json::to_string_pretty(&doc).expect("json") + "\n"),
                ))
            }
        }
    }

    // -- sweep --------------------------------------------------------------

    fn sweep(&self) -> Result<Vec<String>, PipelineError> {
        let (h, info) = self.load_holdout(Stage::Sweep)?;
        let full_digest = subset_digest(h.d, &(0..h.d).collect::<Vec<_>>());

        let mut from_train: BTreeMap<ClassifierKind, CachedCell> = BTreeMap::new();
        for &kind in &self.cfg.classifiers {
            let rel = format!("train/{}/cell.json", kind.name());
            let cell: CachedCell =
                serde_json::from_slice(&self.read(&rel, Stage::Train, Stage::Sweep)?)
                    .map_err(|e| data_err(&rel)(e.to_string()))?;
            from_train.insert(kind, cell);
        }
        let mut rankings = Vec::new();
        for &m in &self.cfg.selectors {
            let rel = format!("select/{}/ranking.csv", m.name());
            let text = String::from_utf8_lossy(&self.read(&rel, Stage::Select, Stage::Sweep)?)
                .into_owned();
            let r = parse_ranking_csv(&text).map_err(|e| data_err(&rel)(e.to_string()))?;
            if r.width() != h.d {
                return Err(PipelineError::Data(format!(
                    "{rel} ranks {} features, expected {}",
                    r.width(),
                    h.d
                )));
            }
            rankings.push((m, r));
        }

        // (selector, fraction, classifier, subset) in report order.
        let mut specs: Vec<(Option<SelectorMethod>, f64, ClassifierKind, Vec<usize>)> = Vec::new();
        for &kind in &self.cfg.classifiers {
            specs.push((None, 1.0, kind, (0..h.d).collect()));
        }
        for (m, r) in &rankings {
            for &p in &self.cfg.fractions {
                let subset =
                    select_top_fraction(r, p).map_err(|e| data_err("fractions")(e.to_string()))?;
                for &kind in &self.cfg.classifiers {
                    specs.push((Some(*m), p, kind, subset.clone()));
                }
            }
        }

        let mut jobs: Vec<(ClassifierKind, String, &[usize])> = Vec::new();
        for (_, _, kind, subset) in &specs {
            let digest = subset_digest(h.d, subset);
            if digest != full_digest && !jobs.iter().any(|(k, d, _)| k == kind && *d == digest) {
                jobs.push((*kind, digest, subset));
            }
        }
        let computed: Vec<(String, CachedCell)> = jobs
            .par_iter()
            .map(|(kind, digest, subset)| {
                let rel = format!("sweep/cells/{}-{digest}.json", kind.name());
                let key = self.cell_key(*kind, digest);
                if let Ok(bytes) = std::fs::read(self.out.join(&rel)) {
                    if let Ok(c) = serde_json::from_slice::<CachedCell>(&bytes) {
                        if c.key == key {
                            return Ok((rel, c));
                        }
                    }
                }
                let out = self.evaluate(&h, &info.feature_set, *kind, subset)?;
                write_atomic(&self.out.join(&rel), &json_bytes(&out.cached))?;
                Ok((rel, out.cached))
            })
            .collect::<Result<_, PipelineError>>()?;

        let mut artifacts: Vec<String> = computed.iter().map(|(rel, _)| rel.clone()).collect();
        let cells: Vec<ReportCell> = specs
            .iter()
            .map(|(sel, p, kind, subset)| {
                let digest = subset_digest(h.d, subset);
                let base = if digest == full_digest {
                    &from_train[kind]
                } else {
                    let i = jobs
                        .iter()
                        .position(|(k, d, _)| k == kind && *d == digest)
                        .expect("job listed");
                    &computed[i].1
                };
                ReportCell {
                    feature_set: info.feature_set.clone(),
                    selector: sel.map(|m| m.name().to_string()),
                    fraction: *p,
                    dimension: subset.len(),
                    ..base.cell.clone()
                }
            })
            .collect();
        self.write("sweep/cells.json", &json_bytes(&cells), &mut artifacts)?;
        Ok(artifacts)
    }

    // -- report -------------------------------------------------------------

    fn report(&self) -> Result<Vec<String>, PipelineError> {
        let cells: Vec<ReportCell> =
            serde_json::from_slice(&self.read("sweep/cells.json", Stage::Sweep, Stage::Report)?)
                .map_err(|e| data_err("sweep/cells.json")(e.to_string()))?;
        let info: SampleInfo = serde_json::from_slice(&self.read(
            "ingest/samples.json",
            Stage::Ingest,
            Stage::Report,
        )?)
        .map_err(|e| data_err("ingest/samples.json")(e.to_string()))?;
        let report = build_report(cells);
        let mut artifacts = Vec::new();
        self.write(
            "report/report.csv",
            report_csv(&report).as_bytes(),
            &mut artifacts,
        )?;
        self.write(
            "report/impact.csv",
            impact_csv(&report).as_bytes(),
            &mut artifacts,
        )?;
        self.write(
            "report/tables.txt",
            render_tables(&report).as_bytes(),
            &mut artifacts,
        )?;
        for c in &report.cells {
            let rel = format!(
                "report/confusion/{}_{}_{}_{}.csv",
                c.feature_set,
                c.selector.as_deref().unwrap_or("full"),
                c.fraction,
                c.classifier
            );
            if !artifacts.contains(&rel) {
                self.write(
                    &rel,
                    confusion_csv(&c.confusion, &info.class_names).as_bytes(),
                    &mut artifacts,
                )?;
            }
        }
        Ok(artifacts)
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Runs `f` on a dedicated pool of `jobs` worker threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

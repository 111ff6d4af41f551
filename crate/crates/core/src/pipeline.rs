//! Stage orchestration and on-disk artifacts.
//!
//! A run writes into an output directory:
//!
//! ```text
//! plans/autodp.json          normalization and balance plans
//! features/importance.json   information-gain scores (+ .csv export)
//! features/selection.json    selected mask and final archive (+ .csv export)
//! search/autofs_trace.csv    every feature-selection evaluation
//! search/cash.json           chosen learner configuration and archive
//! search/cash_trace.csv      every configuration evaluation
//! model/model.json           final model
//! report/report.json         test metrics (+ report.md, calibration.csv)
//! ```
//!
//! JSON artifacts share an envelope recording the config digest and the digests of the
//! artifacts they were built from; loading checks that chain. Digests skip timing
//! fields so that two runs differing only in measured times chain identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodp::{self, BalancePlan, BalanceSettings, BalanceWarning, ClassBalanceRecord, NormalizationPlan};
use crate::autofs::{self, FeatureMask};
use crate::cash::{self, Candidate, CandidateConfig, CashSettings, FitnessVector, LatencySource, Range, SearchSpace};
use crate::dataset::{self, class_distribution};
use crate::evaluation::{self, EvalReport, Timing};
use crate::feature_scoring::{self, FeatureImportance};
use crate::gbdt::{self, argmax_rows, GbdtModel, LearnerKind};
use crate::util::{sha256_hex, stream_rng};
use crate::{DataTable, Error, Result};

pub const ARTIFACT_FORMAT: &str = "moo-ids-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

/// Keys whose values are measured times or derived from them.
const TIMING_KEYS: [&str; 6] = ["timing", "train_time_s", "t_avg_s", "t_norm", "t_raw_ms", "tau"];

/// Stages run by a full pipeline, in order.
pub const PIPELINE_STAGES: [&str; 6] = ["preprocess", "score-features", "autofs", "cash", "train", "evaluate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub label_column: String,
    /// Stratified subsample of the dataset taken before splitting; 1 keeps every row.
    pub sample_fraction: f64,
    pub test_fraction: f64,
    pub cv_folds: usize,
    pub seed: u64,
    pub sw_alpha: f64,
    pub k_neighbors: usize,
    pub smote_share: f64,
    pub ig_bins: usize,
    pub autofs_particles: usize,
    pub autofs_iterations: usize,
    pub cash_particles: usize,
    pub cash_iterations: usize,
    pub latency: LatencySource,
    pub tau_scale: Option<f64>,
    pub space: SearchSpace,
    /// Not part of the config digest.
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: PathBuf::new(),
            label_column: "Label".into(),
            sample_fraction: 1.0,
            test_fraction: 0.2,
            cv_folds: 5,
            seed: 0,
            sw_alpha: autodp::DEFAULT_ALPHA,
            k_neighbors: autodp::DEFAULT_NEIGHBORS,
            smote_share: autodp::DEFAULT_SMOTE_SHARE,
            ig_bins: feature_scoring::DEFAULT_BINS,
            autofs_particles: 30,
            autofs_iterations: 50,
            cash_particles: 10,
            cash_iterations: 10,
            latency: LatencySource::WallClock,
            tau_scale: None,
            space: SearchSpace::default(),
            output: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn parse_pair<T: std::str::FromStr>(key: &str, value: &str) -> Result<(T, T)> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| Error::InvalidArgument(format!("{key}: expected \"lo,hi\", got {value:?}")))?;
    Ok((parse(key, lo.trim())?, parse(key, hi.trim())?))
}

impl PipelineConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key = value", no + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    /// Sets one field by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "label_column" => self.label_column = value.to_string(),
            "sample_fraction" => self.sample_fraction = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "cv_folds" => self.cv_folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "sw_alpha" => self.sw_alpha = parse(key, value)?,
            "k_neighbors" => self.k_neighbors = parse(key, value)?,
            "smote_share" => self.smote_share = parse(key, value)?,
            "ig_bins" => self.ig_bins = parse(key, value)?,
            "autofs_particles" => self.autofs_particles = parse(key, value)?,
            "autofs_iterations" => self.autofs_iterations = parse(key, value)?,
            "cash_particles" => self.cash_particles = parse(key, value)?,
            "cash_iterations" => self.cash_iterations = parse(key, value)?,
            "latency" => {
                self.latency = match value {
                    "wall_clock" => LatencySource::WallClock,
                    "model_cost" => LatencySource::ModelCost,
                    _ => return Err(Error::InvalidArgument(format!("latency: unknown source {value:?}"))),
                }
            }
            "tau_scale" => {
                self.tau_scale = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "space_learners" => {
                let values: Vec<String> = value.split(',').map(|v| v.trim().to_string()).collect();
                self.space.set_range("learner", Range::Categorical { values })?;
            }
            "space_n_estimators" | "space_max_depth" => {
                let (lo, hi) = parse_pair(key, value)?;
                self.space
                    .set_range(&key["space_".len()..], Range::Integer { lo, hi })?;
            }
            "space_learning_rate" | "space_lambda_l2" => {
                let (lo, hi) = parse_pair(key, value)?;
                self.space.set_range(&key["space_".len()..], Range::Real { lo, hi })?;
            }
            "output" => self.output = PathBuf::from(value),
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if self.k_neighbors < 1 || !(0.0..=1.0).contains(&self.smote_share) {
            return bad("k_neighbors must be >= 1 and smote_share in [0, 1]".into());
        }
        if self.ig_bins < 2 {
            return bad("ig_bins must be at least 2".into());
        }
        self.space.validate()
    }

    /// Digest of every setting except the output directory.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        sha256_hex(value.to_string().as_bytes())
    }

    pub fn balance_settings(&self) -> BalanceSettings {
        BalanceSettings {
            k_neighbors: self.k_neighbors,
            smote_share: self.smote_share,
        }
    }

    pub fn cash_settings(&self) -> CashSettings {
        CashSettings {
            folds: self.cv_folds,
            latency: self.latency,
            tau_scale: self.tau_scale,
            ..CashSettings::default()
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output.clone(),
        }
    }
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn autodp(&self) -> PathBuf {
        self.root.join("plans/autodp.json")
    }
    pub fn importance(&self) -> PathBuf {
        self.root.join("features/importance.json")
    }
    pub fn importance_csv(&self) -> PathBuf {
        self.root.join("features/importance.csv")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("features/selection.json")
    }
    pub fn selection_csv(&self) -> PathBuf {
        self.root.join("features/selection.csv")
    }
    pub fn autofs_trace(&self) -> PathBuf {
        self.root.join("search/autofs_trace.csv")
    }
    pub fn cash(&self) -> PathBuf {
        self.root.join("search/cash.json")
    }
    pub fn cash_trace(&self) -> PathBuf {
        self.root.join("search/cash_trace.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model/model.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Every file a full pipeline run writes.
    pub fn all_files(&self) -> Vec<PathBuf> {
        let r = self.report_dir();
        vec![
            self.autodp(),
            self.importance(),
            self.importance_csv(),
            self.selection(),
            self.selection_csv(),
            self.autofs_trace(),
            self.cash(),
            self.cash_trace(),
            self.model(),
            r.join("report.json"),
            r.join("report.md"),
            r.join("calibration.csv"),
        ]
    }
}

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// SHA-256 of the JSON form of `value` with timing fields removed.
pub fn content_digest<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    strip_timing(&mut v);
    Ok(sha256_hex(v.to_string().as_bytes()))
}

/// Versioned envelope around a stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config_digest: String,
    /// Digest of each input, keyed by input name.
    pub upstream: BTreeMap<String, String>,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    pub fn new(kind: &str, config_digest: String, upstream: BTreeMap<String, String>, body: T) -> Self {
        Artifact {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            kind: kind.into(),
            config_digest,
            upstream,
            body,
        }
    }

    pub fn digest(&self) -> Result<String> {
        content_digest(self)
    }

    /// Writes pretty JSON and returns the artifact digest.
    pub fn write(&self, path: &Path) -> Result<String> {
        write_json(self, path)?;
        self.digest()
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let head: serde_json::Value = serde_json::from_slice(&bytes)?;
        if head["format"] != ARTIFACT_FORMAT || head["version"] != ARTIFACT_VERSION || head["kind"] != kind {
            return Err(Error::Artifact(format!(
                "{} is not a version {ARTIFACT_VERSION} {kind:?} artifact",
                path.display()
            )));
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Fails unless the recorded digest of input `name` equals `digest`.
    pub fn require_upstream(&self, name: &str, digest: &str) -> Result<()> {
        match self.upstream.get(name) {
            Some(d) if d == digest => Ok(()),
            Some(_) => Err(Error::Artifact(format!(
                "{} artifact was built from a different {name} artifact",
                self.kind
            ))),
            None => Err(Error::Artifact(format!(
                "{} artifact does not record a {name} input",
                self.kind
            ))),
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn upstream(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Shared record of notable data accesses, in order.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<String>>>);

impl AccessLog {
    pub fn record(&self, event: impl Into<String>) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(event.into());
    }

    pub fn events(&self) -> Vec<String> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// The hold-out rows. Features are freely readable; every label read is logged.
#[derive(Debug, Clone)]
pub struct HeldOut {
    table: DataTable,
    log: AccessLog,
}

impl HeldOut {
    pub fn new(table: DataTable, log: AccessLog) -> Self {
        HeldOut { table, log }
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.table.features().view()
    }

    pub fn feature_names(&self) -> &[String] {
        self.table.feature_names()
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    /// Labels, logging `test-labels:<stage>`.
    pub fn labels(&self, stage: &str) -> &[usize] {
        self.log.record(format!("test-labels:{stage}"));
        self.table.labels()
    }

    fn map_features(&self, f: impl FnOnce(&Array2<f64>) -> Result<Array2<f64>>) -> Result<HeldOut> {
        Ok(HeldOut {
            table: self.table.with_features(f(self.table.features())?)?,
            log: self.log.clone(),
        })
    }

    fn select_columns(&self, columns: &[usize]) -> HeldOut {
        HeldOut {
            table: self.table.select_columns(columns),
            log: self.log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutodpBody {
    pub seed: u64,
    pub dataset_digest: String,
    pub label_names: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub normalization: NormalizationPlan,
    pub balance_plan: BalancePlan,
    pub balance_records: Vec<ClassBalanceRecord>,
    pub balance_warnings: Vec<BalanceWarning>,
    /// Digest of the normalized, balanced training table.
    pub train_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceBody {
    pub bins: usize,
    pub importance: FeatureImportance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub mask: FeatureMask,
    pub fitness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionBody {
    pub mask: FeatureMask,
    pub selected_features: Vec<String>,
    pub fitness: [f64; 2],
    pub front: Vec<FrontEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashBody {
    pub config: CandidateConfig,
    pub fitness: FitnessVector,
    pub tau: f64,
    pub latency: LatencySource,
    pub archive: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBody {
    pub config: CandidateConfig,
    pub train_time_s: f64,
    pub model: GbdtModel,
}

/// Training and test data after loading, splitting and pre-processing.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset_digest: String,
    pub normalization: NormalizationPlan,
    pub balance_plan: BalancePlan,
    pub balance_records: Vec<ClassBalanceRecord>,
    pub balance_warnings: Vec<BalanceWarning>,
    /// Normalized and balanced.
    pub train: DataTable,
    /// Normalized with the training plan; never balanced.
    pub test: HeldOut,
}

/// Loads, samples, splits, normalizes both parts with a plan fitted on the training
/// part (or `plan` when given), and balances the training part only.
pub fn prepare_data(
    config: &PipelineConfig,
    plan: Option<&NormalizationPlan>,
    log: &AccessLog,
) -> Result<PreparedData> {
    let mut table = dataset::load_csv(&config.dataset, &config.label_column)?;
    let dataset_digest = table.digest();
    if config.sample_fraction < 1.0 {
        table = dataset::stratified_sample(&table, config.sample_fraction, config.seed)?;
    }
    let (train, test) = dataset::train_test_split(&table, config.test_fraction, config.seed)?;
    let normalization = match plan {
        Some(p) => p.clone(),
        None => autodp::fit_normalization_with_alpha(&train, config.sw_alpha, config.seed)?,
    };
    let train = autodp::apply_normalization(&normalization, &train)?;
    let test = HeldOut::new(test, log.clone()).map_features(|x| normalization.transform(x))?;
    let balance_plan = autodp::compute_balance_plan(&class_distribution(&train))?;
    let balanced = autodp::balance(&train, &balance_plan, config.balance_settings(), config.seed)?;
    Ok(PreparedData {
        dataset_digest,
        normalization,
        balance_plan,
        balance_records: balanced.records,
        balance_warnings: balanced.warnings,
        train: balanced.table,
        test,
    })
}

/// Accuracy and row count of a `predict` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n_rows: usize,
    /// Present when the input had a label column.
    pub accuracy: Option<f64>,
}

/// Runs stages against one output directory, loading earlier artifacts on demand.
pub struct Session {
    pub config: PipelineConfig,
    pub log: AccessLog,
    prepared: Option<(String, PreparedData)>,
}

impl Session {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Session {
            config,
            log: AccessLog::default(),
            prepared: None,
        })
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    /// Runs one stage by name (any of [`PIPELINE_STAGES`]).
    pub fn run_stage(&mut self, stage: &str) -> Result<()> {
        self.log.record(format!("stage:{stage}"));
        match stage {
            "preprocess" => self.preprocess().map(drop),
            "score-features" => self.score_features().map(drop),
            "autofs" => self.autofs().map(drop),
            "cash" => self.cash().map(drop),
            "train" => self.train().map(drop),
            "evaluate" => self.evaluate().map(drop),
            _ => Err(Error::InvalidArgument(format!("unknown stage {stage:?}"))),
        }
    }

    fn digest_config(&self) -> String {
        self.config.digest()
    }

    pub fn preprocess(&mut self) -> Result<Artifact<AutodpBody>> {
        let data = prepare_data(&self.config, None, &self.log)?;
        let artifact = Artifact::new(
            "autodp",
            self.digest_config(),
            upstream(&[("dataset", &data.dataset_digest)]),
            AutodpBody {
                seed: self.config.seed,
                dataset_digest: data.dataset_digest.clone(),
                label_names: data.train.label_names().to_vec(),
                n_train: data.train.n_rows(),
                n_test: data.test.n_rows(),
                normalization: data.normalization.clone(),
                balance_plan: data.balance_plan.clone(),
                balance_records: data.balance_records.clone(),
                balance_warnings: data.balance_warnings.clone(),
                train_digest: data.train.digest(),
            },
        );
        let digest = artifact.write(&self.layout().autodp())?;
        self.prepared = Some((digest, data));
        Ok(artifact)
    }

    /// The prepared data and the digest of the autodp artifact it matches.
    fn prepared(&mut self) -> Result<(String, &PreparedData)> {
        if self.prepared.is_none() {
            let artifact: Artifact<AutodpBody> = Artifact::read(&self.layout().autodp(), "autodp")?;
            let data = prepare_data(&self.config, Some(&artifact.body.normalization), &self.log)?;
            if data.dataset_digest != artifact.body.dataset_digest {
                return Err(Error::Artifact("dataset changed since preprocessing".into()));
            }
            if data.train.digest() != artifact.body.train_digest {
                return Err(Error::Artifact(
                    "preprocessing does not reproduce with the current configuration".into(),
                ));
            }
            self.prepared = Some((artifact.digest()?, data));
        }
        let (d, data) = self.prepared.as_ref().expect("just set");
        Ok((d.clone(), data))
    }

    pub fn score_features(&mut self) -> Result<Artifact<ImportanceBody>> {
        let bins = self.config.ig_bins;
        let config_digest = self.digest_config();
        let layout = self.layout();
        let (autodp_digest, data) = self.prepared()?;
        let importance = feature_scoring::information_gain(&data.train, bins)?;
        let artifact = Artifact::new(
            "importance",
            config_digest,
            upstream(&[("autodp", &autodp_digest)]),
            ImportanceBody { bins, importance },
        );
        artifact.write(&layout.importance())?;
        ensure_parent(&layout.importance_csv())?;
        artifact.body.importance.write_csv(layout.importance_csv())?;
        Ok(artifact)
    }

    pub fn autofs(&mut self) -> Result<Artifact<SelectionBody>> {
        let layout = self.layout();
        let stored: Artifact<ImportanceBody> = Artifact::read(&layout.importance(), "importance")?;
        let importance = &stored.body.importance;
        let mut swarm = autofs::default_swarm(importance.len(), self.config.seed);
        swarm.n_particles = self.config.autofs_particles;
        swarm.iterations = self.config.autofs_iterations;
        let outcome = autofs::select_from_importance(importance, swarm)?;
        let body = SelectionBody {
            selected_features: outcome
                .mask
                .selected_indices()
                .iter()
                .map(|&i| importance.feature_names[i].clone())
                .collect(),
            mask: outcome.mask.clone(),
            fitness: outcome.fitness,
            front: outcome
                .archive()
                .entries
                .iter()
                .map(|e| FrontEntry {
                    mask: e.solution.clone(),
                    fitness: e.fitness.clone(),
                })
                .collect(),
        };
        let artifact = Artifact::new(
            "selection",
            self.digest_config(),
            upstream(&[("importance", &stored.digest()?)]),
            body,
        );
        artifact.write(&layout.selection())?;
        autofs::write_selection_csv(&outcome.mask, importance, layout.selection_csv())?;
        write_autofs_trace(&outcome.run.trace, &layout.autofs_trace())?;
        Ok(artifact)
    }

    /// Loads the selection and checks it descends from the current preprocessing.
    fn selection(&mut self) -> Result<(Artifact<SelectionBody>, String)> {
        let layout = self.layout();
        let (autodp_digest, _) = self.prepared()?;
        let importance: Artifact<ImportanceBody> = Artifact::read(&layout.importance(), "importance")?;
        importance.require_upstream("autodp", &autodp_digest)?;
        let selection: Artifact<SelectionBody> = Artifact::read(&layout.selection(), "selection")?;
        selection.require_upstream("importance", &importance.digest()?)?;
        let digest = selection.digest()?;
        Ok((selection, digest))
    }

    pub fn cash(&mut self) -> Result<Artifact<CashBody>> {
        let layout = self.layout();
        let (selection, selection_digest) = self.selection()?;
        let config = self.config.clone();
        let (_, data) = self.prepared()?;
        let train = autofs::apply_mask(&data.train, &selection.body.mask)?;
        let mut swarm = cash::default_swarm(&config.space, config.seed);
        swarm.n_particles = config.cash_particles;
        swarm.iterations = config.cash_iterations;
        let settings = config.cash_settings();
        let outcome = cash::run_opce_cash(&train, &config.space, swarm, &settings, config.seed)?;
        let artifact = Artifact::new(
            "cash",
            config.digest(),
            upstream(&[("selection", &selection_digest)]),
            CashBody {
                config: outcome.config.clone(),
                fitness: outcome.fitness,
                tau: outcome.tau,
                latency: settings.latency,
                archive: outcome.archive.entries.iter().map(|e| e.solution.clone()).collect(),
            },
        );
        artifact.write(&layout.cash())?;
        cash::write_trace_csv(&outcome.trace, &config.space, layout.cash_trace())?;
        Ok(artifact)
    }

    pub fn train(&mut self) -> Result<Artifact<ModelBody>> {
        let layout = self.layout();
        let (selection, selection_digest) = self.selection()?;
        let cash_artifact: Artifact<CashBody> = Artifact::read(&layout.cash(), "cash")?;
        cash_artifact.require_upstream("selection", &selection_digest)?;
        let seed = self.config.seed;
        let config_digest = self.digest_config();
        let (autodp_digest, data) = self.prepared()?;
        let train = autofs::apply_mask(&data.train, &selection.body.mask)?;
        let chosen = cash_artifact.body.config.clone();
        let start = std::time::Instant::now();
        let model = gbdt::train(&train, &chosen.hyperparams, chosen.learner_kind, seed)?;
        let train_time_s = start.elapsed().as_secs_f64();
        let artifact = Artifact::new(
            "model",
            config_digest,
            upstream(&[
                ("autodp", &autodp_digest),
                ("selection", &selection_digest),
                ("cash", &cash_artifact.digest()?),
            ]),
            ModelBody {
                config: chosen,
                train_time_s,
                model,
            },
        );
        artifact.write(&layout.model())?;
        Ok(artifact)
    }

    /// Loads the model and checks its chain against the current artifacts.
    fn model(&mut self) -> Result<(Artifact<ModelBody>, FeatureMask)> {
        let layout = self.layout();
        let (selection, selection_digest) = self.selection()?;
        let (autodp_digest, _) = self.prepared()?;
        let model: Artifact<ModelBody> = Artifact::read(&layout.model(), "model")?;
        model.require_upstream("autodp", &autodp_digest)?;
        model.require_upstream("selection", &selection_digest)?;
        Ok((model, selection.body.mask))
    }

    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let (model, mask) = self.model()?;
        let seed = self.config.seed;
        let config_digest = self.digest_config();
        let report_dir = self.layout().report_dir();
        let (_, data) = self.prepared()?;
        let test = data.test.select_columns(&mask.selected_indices());
        let m = &model.body.model;
        let proba = m.predict_proba(test.features())?;
        let per_row = evaluation::inference_seconds_per_row(m, test.features(), 3)?;
        let timing = Timing {
            train_time_s: model.body.train_time_s,
            test_time_per_sample_ms: per_row * 1e3,
        };
        let report = EvalReport::from_probabilities(
            proba.view(),
            test.labels("evaluate"),
            &m.label_names,
            m.size_bytes()?,
            timing,
            seed,
            &config_digest,
        )?;
        let method = format!("{} (selected {} features)", m.learner_kind, mask.selected_count());
        evaluation::emit_report(&report, report_dir, &method)?;
        Ok(report)
    }

    /// Scores a CSV with the stored plan, mask and model; writes
    /// `row,prediction,probability` to `output`.
    pub fn predict(&mut self, input: &Path, output: &Path) -> Result<PredictionSummary> {
        let layout = self.layout();
        let plan: Artifact<AutodpBody> = Artifact::read(&layout.autodp(), "autodp")?;
        let selection: Artifact<SelectionBody> = Artifact::read(&layout.selection(), "selection")?;
        let model: Artifact<ModelBody> = Artifact::read(&layout.model(), "model")?;
        model.require_upstream("autodp", &plan.digest()?)?;
        model.require_upstream("selection", &selection.digest()?)?;

        let (table, labelled) = dataset::load_csv_for_scoring(input, &self.config.label_column)?;
        let names = plan.body.normalization.feature_names();
        let columns = names
            .iter()
            .map(|n| {
                table
                    .feature_names()
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Schema(format!("input lacks feature column {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = table.select_columns(&columns);
        let x = plan.body.normalization.transform(table.features())?;
        let x = autofs::apply_mask(&table.with_features(x)?, &selection.body.mask)?;
        let m = &model.body.model;
        let proba = m.predict_proba(x.features().view())?;
        let predictions = argmax_rows(&proba);

        ensure_parent(output)?;
        let mut w = csv::Writer::from_path(output)?;
        w.write_record(["row", "prediction", "probability"])?;
        for (i, &p) in predictions.iter().enumerate() {
            w.write_record([i.to_string(), m.label_names[p].clone(), proba[[i, p]].to_string()])?;
        }
        w.flush().map_err(|e| Error::io(output, e))?;

        let accuracy = if labelled {
            let mut correct = 0;
            for (&y, &p) in table.labels().iter().zip(&predictions) {
                let name = &table.label_names()[y];
                if m.label_names.iter().position(|l| l == name).is_none() {
                    return Err(Error::Data(format!("label {name:?} is unknown to the model")));
                }
                correct += usize::from(&m.label_names[p] == name);
            }
            Some(correct as f64 / predictions.len().max(1) as f64)
        } else {
            None
        };
        Ok(PredictionSummary {
            n_rows: predictions.len(),
            accuracy,
        })
    }

    /// Training-set accuracy of the stored model on the prepared (balanced) training rows.
    pub fn training_accuracy(&mut self) -> Result<f64> {
        let (model, mask) = self.model()?;
        let (_, data) = self.prepared()?;
        let train = autofs::apply_mask(&data.train, &mask)?;
        let p = model.body.model.predict(train.features().view())?;
        let hits = p.iter().zip(train.labels()).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / p.len() as f64)
    }
}

fn write_autofs_trace(trace: &[crate::mopso::TraceRecord<FeatureMask>], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "particle", "selected", "importance", "percentage", "mask"])?;
    for r in trace {
        let mut bits = String::with_capacity(r.solution.len());
        for &b in r.solution.bits() {
            let _ = write!(bits, "{}", u8::from(b));
        }
        w.write_record([
            r.iteration.to_string(),
            r.particle.to_string(),
            r.solution.selected_count().to_string(),
            r.fitness[0].to_string(),
            r.fitness[1].to_string(),
            bits,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub files: Vec<PathBuf>,
    pub events: Vec<String>,
}

/// Runs every stage in order.
pub fn run_pipeline(config: PipelineConfig) -> Result<PipelineOutcome> {
    let mut session = Session::new(config)?;
    for stage in PIPELINE_STAGES {
        session.run_stage(stage)?;
    }
    let report = EvalReport::from_json(
        &std::fs::read(session.layout().report_dir().join("report.json"))
            .map_err(|e| Error::io(session.layout().report_dir(), e))?,
    )?;
    Ok(PipelineOutcome {
        report,
        files: session.layout().all_files(),
        events: session.log.events(),
    })
}

/// Synthetic flow-like table with four imbalanced classes, three informative features,
/// a redundant copy of one of them, a heavy-tailed feature, two noise features and a
/// constant column.
pub fn synthetic_fixture(n_rows: usize, seed: u64) -> DataTable {
    let names = ["BENIGN", "DoS", "PortScan", "Bot"];
    let shares = [0.5, 0.3, 0.15, 0.05];
    let mut rng = stream_rng(seed, 0);
    let feature_names: Vec<String> = [
        "flow_duration",
        "fwd_packets",
        "pkt_len_mean",
        "flow_duration_copy",
        "iat_max",
        "noise_a",
        "noise_b",
        "protocol",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut x = Array2::zeros((n_rows, feature_names.len()));
    let mut labels = Vec::with_capacity(n_rows);
    let mut bound = 0.0;
    let cumulative: Vec<f64> = shares
        .iter()
        .map(|s| {
            bound += s;
            bound
        })
        .collect();
    for i in 0..n_rows {
        let u = (i as f64 + 0.5) / n_rows as f64;
        let c = cumulative.iter().position(|&b| u < b).unwrap_or(3);
        labels.push(c);
        let cf = c as f64;
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng| rng.random::<f64>() - 0.5;
        let duration = 10.0 * cf + 3.0 * jitter(&mut rng);
        x[[i, 0]] = duration;
        x[[i, 1]] = (cf * 7.0 + 2.0 * jitter(&mut rng)).round();
        x[[i, 2]] = 100.0 + 40.0 * (cf - 1.5).abs() + 5.0 * jitter(&mut rng);
        x[[i, 3]] = duration * 2.0;
        x[[i, 4]] = (-rng.random::<f64>().max(1e-12).ln()) * (1.0 + cf);
        x[[i, 5]] = rng.random::<f64>();
        x[[i, 6]] = 50.0 * jitter(&mut rng);
        x[[i, 7]] = 6.0;
    }
    DataTable::new(feature_names, x, labels, names.iter().map(|s| s.to_string()).collect())
        .expect("fixture is well formed")
}

/// A small learner configuration that fits [`synthetic_fixture`] well.
pub fn fixture_learner() -> (LearnerKind, crate::Hyperparams) {
    (
        LearnerKind::ExactSecondOrder,
        crate::Hyperparams {
            n_estimators: 20,
            learning_rate: 0.3,
            max_depth: 3,
            ..Default::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config(dir: &Path, seed: u64) -> PipelineConfig {
        let data = dir.join("data.csv");
        if !data.exists() {
            dataset::write_csv(&synthetic_fixture(500, 1), &data, "Label").unwrap();
        }
        let mut c = PipelineConfig::from_kv_str(&format!(
            "dataset = {}\nseed = {seed}\ncv_folds = 3\nautofs_particles = 10\nautofs_iterations = 10\n\
             cash_particles = 4\ncash_iterations = 2\nlatency = model_cost\n\
             space_n_estimators = 5,25\nspace_max_depth = 2,4\n",
            data.display()
        ))
        .unwrap();
        c.output = dir.join(format!("out{seed}"));
        c
    }

    #[test]
    fn kv_parsing_and_overrides() {
        let c =
            PipelineConfig::from_kv_str("# comment\nseed = 7\n\ntest_fraction=0.3 # trailing\nlatency = model_cost\n")
                .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.test_fraction, 0.3);
        assert_eq!(c.latency, LatencySource::ModelCost);
        assert_eq!(c.cv_folds, 5);
        assert!(PipelineConfig::from_kv_str("nonsense = 1").is_err());
        assert!(PipelineConfig::from_kv_str("seed 7").is_err());
        assert!(PipelineConfig::from_kv_str("seed = x").is_err());
        assert!(PipelineConfig::from_kv_str("space_max_depth = 5,2").is_err());
        let mut c = PipelineConfig::default();
        c.set("space_learners", "histogram_goss_efb").unwrap();
        assert!(c.set("space_learners", "svm").is_err());
    }

    #[test]
    fn digest_ignores_output_dir() {
        let mut a = PipelineConfig::default();
        let d = a.digest();
        a.output = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), d);
        a.seed = 1;
        assert_ne!(a.digest(), d);
    }

    #[test]
    fn content_digest_skips_timing() {
        let a = serde_json::json!({"x": 1, "timing": {"train_time_s": 1.0}, "inner": [{"t_avg_s": 2.0, "y": 3}]});
        let b = serde_json::json!({"x": 1, "timing": {"train_time_s": 9.0}, "inner": [{"t_avg_s": 5.0, "y": 3}]});
        let c = serde_json::json!({"x": 2, "timing": {"train_time_s": 1.0}, "inner": [{"t_avg_s": 2.0, "y": 3}]});
        assert_eq!(content_digest(&a).unwrap(), content_digest(&b).unwrap());
        assert_ne!(content_digest(&a).unwrap(), content_digest(&c).unwrap());
    }

    #[test]
    fn fixture_is_learnable() {
        let t = synthetic_fixture(500, 1);
        assert_eq!(dataset::class_distribution(&t).counts, vec![250, 150, 75, 25]);
        let (kind, hp) = fixture_learner();
        let model = gbdt::train(&t, &hp, kind, 0).unwrap();
        let p = model.predict(t.features().view()).unwrap();
        let acc = p.iter().zip(t.labels()).filter(|(a, b)| a == b).count() as f64 / 500.0;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn full_run_writes_every_artifact_and_reads_test_labels_last() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(quick_config(dir.path(), 3)).unwrap();
        for f in &out.files {
            assert!(f.exists(), "{} missing", f.display());
        }
        let label_reads: Vec<usize> = out
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.starts_with("test-labels:"))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(label_reads.len(), 1);
        assert_eq!(out.events[label_reads[0]], "test-labels:evaluate");
        let evaluate_start = out.events.iter().position(|e| e == "stage:evaluate").unwrap();
        assert!(label_reads[0] > evaluate_start);
        assert!(out.report.f1_weighted > 0.8, "{}", out.report.f1_weighted);
        assert_eq!(out.report.n_samples, 100);
    }

    #[test]
    fn standalone_stages_check_the_chain() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config(dir.path(), 4);
        let layout = config.layout();
        run_pipeline(config.clone()).unwrap();

        // autofs alone on the stored scores reproduces the stored selection
        let before = std::fs::read(layout.selection()).unwrap();
        let mut s = Session::new(config.clone()).unwrap();
        s.run_stage("autofs").unwrap();
        assert_eq!(std::fs::read(layout.selection()).unwrap(), before);

        // evaluate alone matches the pipeline's report apart from timing
        let report = std::fs::read(layout.report_dir().join("report.json")).unwrap();
        let mut s = Session::new(config.clone()).unwrap();
        s.run_stage("evaluate").unwrap();
        let again = std::fs::read(layout.report_dir().join("report.json")).unwrap();
        assert_eq!(
            content_digest(&serde_json::from_slice::<serde_json::Value>(&report).unwrap()).unwrap(),
            content_digest(&serde_json::from_slice::<serde_json::Value>(&again).unwrap()).unwrap()
        );

        // a model whose selection no longer matches is rejected
        let mut selection: serde_json::Value = serde_json::from_slice(&before).unwrap();
        selection["body"]["fitness"][0] = serde_json::json!(0.123);
        std::fs::write(layout.selection(), serde_json::to_vec(&selection).unwrap()).unwrap();
        let mut s = Session::new(config.clone()).unwrap();
        assert!(matches!(s.run_stage("evaluate"), Err(Error::Artifact(_))));
        std::fs::write(layout.selection(), &before).unwrap();

        // artifacts from another format version are rejected
        let mut model: serde_json::Value = serde_json::from_slice(&std::fs::read(layout.model()).unwrap()).unwrap();
        model["version"] = serde_json::json!(99);
        std::fs::write(layout.model(), serde_json::to_vec(&model).unwrap()).unwrap();
        let mut s = Session::new(config).unwrap();
        assert!(matches!(s.run_stage("evaluate"), Err(Error::Artifact(_))));
    }

    #[test]
    fn predict_matches_training_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config(dir.path(), 5);
        run_pipeline(config.clone()).unwrap();
        let mut s = Session::new(config.clone()).unwrap();
        let train_acc = s.training_accuracy().unwrap();

        // predict takes raw rows, so write the unnormalized training split back out
        let data = dataset::load_csv(&config.dataset, "Label").unwrap();
        let (train, _) = dataset::train_test_split(&data, config.test_fraction, config.seed).unwrap();
        let raw = dir.path().join("train_raw.csv");
        dataset::write_csv(&train, &raw, "Label").unwrap();
        let summary = s.predict(&raw, &dir.path().join("pred.csv")).unwrap();
        assert_eq!(summary.n_rows, train.n_rows());
        let acc = summary.accuracy.unwrap();
        assert!(
            acc > 0.9,
            "raw-train accuracy {acc}, balanced-train accuracy {train_acc}"
        );
        let pred = std::fs::read_to_string(dir.path().join("pred.csv")).unwrap();
        assert_eq!(pred.lines().count(), train.n_rows() + 1);
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let mut c = PipelineConfig::default();
        c.dataset = PathBuf::from("/nonexistent/data.csv");
        let dir = tempfile::tempdir().unwrap();
        c.output = dir.path().to_path_buf();
        let err = run_pipeline(c).unwrap_err();
        assert!(err.is_data_error(), "{err}");
    }
}

//! Combined learner selection and hyperparameter search.
//!
//! Each particle lives in the unit cube; every coordinate decodes to one dimension of a
//! [`SearchSpace`]. A candidate is scored by K-fold cross-validation on three objectives:
//! weighted F1 (maximize), mean predicted-class probability (maximize) and a
//! sigmoid-squashed per-row prediction latency (minimize).

use std::path::Path;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{classification_metrics, confidence_metrics, inference_seconds_per_row};
use crate::gbdt::{self, argmax_rows, GbdtModel, Hyperparams, LearnerKind};
use crate::mopso::{
    self, select_final, Archive, Direction, Evaluation, ObjectiveSpec, Problem, SwarmConfig, TraceRecord,
};
use crate::util::{median, sigmoid};
use crate::{DataTable, Error, FoldAssignment, Result};

/// Timed passes serialize on this lock so concurrent candidates do not skew each other.
static TIMING_LANE: Mutex<()> = Mutex::new(());

/// Seconds charged per tree node visited under [`LatencySource::ModelCost`].
pub const SECONDS_PER_NODE_VISIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Range {
    Categorical { values: Vec<String> },
    Integer { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub range: Range,
    pub scale: Scale,
}

impl Dimension {
    pub fn categorical(name: &str, values: &[&str]) -> Self {
        Dimension {
            name: name.into(),
            range: Range::Categorical {
                values: values.iter().map(|v| v.to_string()).collect(),
            },
            scale: Scale::Linear,
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Dimension {
            name: name.into(),
            range: Range::Integer { lo, hi },
            scale: Scale::Linear,
        }
    }

    pub fn real(name: &str, lo: f64, hi: f64, scale: Scale) -> Self {
        Dimension {
            name: name.into(),
            range: Range::Real { lo, hi },
            scale,
        }
    }

    /// Maps `u` in `[0, 1]` onto `[lo, hi]`, geometrically for log scale.
    fn map(&self, lo: f64, hi: f64, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => lo + u * (hi - lo),
            Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("dimension {:?}: {m}", self.name)));
        let (lo, hi) = match &self.range {
            Range::Categorical { values } => {
                if values.is_empty() {
                    return bad("no categorical values".into());
                }
                if self.name == "learner" {
                    for v in values {
                        parse_learner(v)?;
                    }
                }
                return Ok(());
            }
            Range::Integer { lo, hi } => (*lo as f64, *hi as f64),
            Range::Real { lo, hi } => (*lo, *hi),
        };
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("empty range [{lo}, {hi}]"));
        }
        if self.scale == Scale::Log && lo <= 0.0 {
            return bad("log scale needs a positive lower bound".into());
        }
        Ok(())
    }
}

fn parse_learner(name: &str) -> Result<LearnerKind> {
    LearnerKind::ALL
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown learner {name:?}")))
}

const SEARCHABLE: [&str; 10] = [
    "learner",
    "n_estimators",
    "learning_rate",
    "max_depth",
    "lambda_l2",
    "gamma",
    "min_child_hessian",
    "goss_a",
    "goss_b",
    "histogram_bins",
];

/// Ordered search dimensions over a base configuration. Dimensions not listed keep the
/// base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
    pub base: Hyperparams,
    /// Learner used when no `learner` dimension is present.
    pub base_learner: LearnerKind,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            dimensions: vec![
                Dimension::categorical("learner", &["exact_second_order", "histogram_goss_efb"]),
                Dimension::integer("n_estimators", 10, 300),
                Dimension::real("learning_rate", 0.01, 0.5, Scale::Log),
                Dimension::integer("max_depth", 2, 12),
                Dimension::real("lambda_l2", 0.0, 10.0, Scale::Linear),
            ],
            base: Hyperparams::default(),
            base_learner: LearnerKind::ExactSecondOrder,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::InvalidArgument("search space has no dimensions".into()));
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            if !SEARCHABLE.contains(&d.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "{:?} is not a searchable setting",
                    d.name
                )));
            }
            if self.dimensions[..i].iter().any(|e| e.name == d.name) {
                return Err(Error::InvalidArgument(format!("dimension {:?} listed twice", d.name)));
            }
            let categorical = matches!(d.range, Range::Categorical { .. });
            if categorical != (d.name == "learner") {
                return Err(Error::InvalidArgument(format!(
                    "dimension {:?} has the wrong range kind",
                    d.name
                )));
            }
            d.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    /// Replaces the range of the named dimension.
    pub fn set_range(&mut self, name: &str, range: Range) -> Result<()> {
        let d = self
            .dimensions
            .iter_mut()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no dimension named {name:?}")))?;
        d.range = range;
        d.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub learner_kind: LearnerKind,
    pub hyperparams: Hyperparams,
}

impl CandidateConfig {
    /// `name=value` pairs of the searched settings, `;`-separated.
    pub fn describe(&self, space: &SearchSpace) -> String {
        let hp = &self.hyperparams;
        space
            .dimensions
            .iter()
            .filter(|d| d.name != "learner")
            .map(|d| {
                let v = match d.name.as_str() {
                    "n_estimators" => hp.n_estimators.to_string(),
                    "learning_rate" => hp.learning_rate.to_string(),
                    "max_depth" => hp.max_depth.to_string(),
                    "lambda_l2" => hp.lambda_l2.to_string(),
                    "gamma" => hp.gamma.to_string(),
                    "min_child_hessian" => hp.min_child_hessian.to_string(),
                    "goss_a" => hp.goss_a.to_string(),
                    "goss_b" => hp.goss_b.to_string(),
                    _ => hp.histogram_bins.to_string(),
                };
                format!("{}={v}", d.name)
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Decodes a unit-cube position. Categorical: index `floor(u * cardinality)`, clamped;
/// integer: rounded after the (log-)affine map; real: the (log-)affine map.
pub fn decode_particle(position: &[f64], space: &SearchSpace) -> CandidateConfig {
    let mut hp = space.base.clone();
    let mut learner_kind = space.base_learner;
    for (d, &u) in space.dimensions.iter().zip(position) {
        match &d.range {
            Range::Categorical { values } => {
                let i = ((u.clamp(0.0, 1.0) * values.len() as f64).floor() as usize).min(values.len() - 1);
                if let Ok(kind) = parse_learner(&values[i]) {
                    learner_kind = kind;
                }
            }
            Range::Integer { lo, hi } => {
                let v = d.map(*lo as f64, *hi as f64, u).round().clamp(*lo as f64, *hi as f64) as usize;
                match d.name.as_str() {
                    "n_estimators" => hp.n_estimators = v,
                    "max_depth" => hp.max_depth = v,
                    "histogram_bins" => hp.histogram_bins = v,
                    _ => {}
                }
            }
            Range::Real { lo, hi } => {
                let v = d.map(*lo, *hi, u);
                match d.name.as_str() {
                    "learning_rate" => hp.learning_rate = v,
                    "lambda_l2" => hp.lambda_l2 = v,
                    "gamma" => hp.gamma = v,
                    "min_child_hessian" => hp.min_child_hessian = v,
                    "goss_a" => hp.goss_a = v,
                    "goss_b" => hp.goss_b = v,
                    "n_estimators" => hp.n_estimators = v.round() as usize,
                    "max_depth" => hp.max_depth = v.round() as usize,
                    "histogram_bins" => hp.histogram_bins = v.round() as usize,
                    _ => {}
                }
            }
        }
    }
    CandidateConfig {
        learner_kind,
        hyperparams: hp,
    }
}

/// Where per-row prediction latency comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencySource {
    /// Median of timed passes after a warm-up pass.
    WallClock,
    /// Tree nodes visited per row times [`SECONDS_PER_NODE_VISIT`]; machine independent
    /// and reproducible.
    ModelCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashSettings {
    pub folds: usize,
    pub latency: LatencySource,
    /// Fixed latency scale in seconds; `None` calibrates it from the initial swarm.
    pub tau_scale: Option<f64>,
    pub timing_passes: usize,
}

impl Default for CashSettings {
    fn default() -> Self {
        CashSettings {
            folds: 5,
            latency: LatencySource::WallClock,
            tau_scale: None,
            timing_passes: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub f1_avg: f64,
    pub confidence_avg: f64,
    /// Mean per-row latency in seconds; `None` when training failed.
    pub t_avg_s: Option<f64>,
    pub t_norm: f64,
}

impl FitnessVector {
    pub fn worst() -> Self {
        FitnessVector {
            f1_avg: 0.0,
            confidence_avg: 0.0,
            t_avg_s: None,
            t_norm: 1.0,
        }
    }

    /// Recomputes `t_norm = sigmoid(t_avg / tau)`.
    pub fn with_tau(mut self, tau: f64) -> Self {
        if let Some(t) = self.t_avg_s {
            self.t_norm = sigmoid(t / tau);
        }
        self
    }

    pub fn objectives(&self) -> Vec<f64> {
        vec![self.f1_avg, self.confidence_avg, self.t_norm]
    }
}

pub fn objective_spec() -> ObjectiveSpec {
    ObjectiveSpec::equal(&[Direction::Maximize, Direction::Maximize, Direction::Minimize])
}

/// `(train_rows, validation_rows)` per fold.
pub fn fold_rows(folds: &FoldAssignment) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds.k).map(|i| folds.split(i)).collect()
}

fn latency_per_row(model: &GbdtModel, table: &DataTable, settings: &CashSettings) -> Result<f64> {
    let rows = table.features().view();
    match settings.latency {
        LatencySource::ModelCost => {
            Ok(model.node_visits(rows)? as f64 / rows.nrows().max(1) as f64 * SECONDS_PER_NODE_VISIT)
        }
        LatencySource::WallClock => {
            let _lane = TIMING_LANE.lock().unwrap_or_else(|e| e.into_inner());
            inference_seconds_per_row(model, rows, settings.timing_passes)
        }
    }
}

fn score_fold(
    config: &CandidateConfig,
    fit: &DataTable,
    valid: &DataTable,
    settings: &CashSettings,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let model = gbdt::train(fit, &config.hyperparams, config.learner_kind, seed)?;
    let proba = model.predict_proba(valid.features().view())?;
    let predictions = argmax_rows(&proba);
    let f1 = classification_metrics(valid.labels(), &predictions, valid.n_classes())?.f1_weighted;
    let (confidence, _) = confidence_metrics(proba.view(), &predictions, valid.labels())?;
    Ok((f1, confidence, latency_per_row(&model, valid, settings)?))
}

/// Fits on each fold's training rows and scores its validation rows. `t_norm` uses
/// `tau` when given and is 0.5 (the value at zero latency) otherwise. Any failed fold
/// yields [`FitnessVector::worst`].
pub fn evaluate_candidate(
    config: &CandidateConfig,
    train: &DataTable,
    folds: &FoldAssignment,
    settings: &CashSettings,
    tau: Option<f64>,
    seed: u64,
) -> FitnessVector {
    match try_evaluate(config, train, folds, settings, seed) {
        Ok((f1, conf, t)) => {
            let fv = FitnessVector {
                f1_avg: f1,
                confidence_avg: conf,
                t_avg_s: Some(t),
                t_norm: 0.5,
            };
            match tau {
                Some(tau) => fv.with_tau(tau),
                None => fv,
            }
        }
        Err(e) => {
            log::debug!("candidate {config:?} failed: {e}");
            FitnessVector::worst()
        }
    }
}

fn try_evaluate(
    config: &CandidateConfig,
    train: &DataTable,
    folds: &FoldAssignment,
    settings: &CashSettings,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if folds.fold_of_row.len() != train.n_rows() {
        return Err(Error::InvalidArgument(
            "fold assignment does not match the table".into(),
        ));
    }
    let per_fold = fold_rows(folds)
        .into_par_iter()
        .enumerate()
        .map(|(i, (fit_rows, valid_rows))| {
            if valid_rows.is_empty() {
                return Err(Error::Data(format!("fold {i} has no validation rows")));
            }
            score_fold(
                config,
                &train.select_rows(&fit_rows),
                &train.select_rows(&valid_rows),
                settings,
                seed.wrapping_add(i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let k = per_fold.len() as f64;
    let sum = per_fold
        .iter()
        .fold((0.0, 0.0, 0.0), |a, f| (a.0 + f.0, a.1 + f.1, a.2 + f.2));
    Ok((sum.0 / k, sum.1 / k, sum.2 / k))
}

/// A scored candidate. Equality looks at the configuration only, so the archive never
/// holds one configuration twice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub config: CandidateConfig,
    pub fitness: FitnessVector,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

struct CashProblem<'a> {
    train: &'a DataTable,
    folds: &'a FoldAssignment,
    space: &'a SearchSpace,
    settings: &'a CashSettings,
    tau: OnceLock<f64>,
}

impl Problem for CashProblem<'_> {
    type Solution = Candidate;

    fn evaluate(&self, position: &[f64], rng: &mut ChaCha8Rng) -> std::result::Result<Evaluation<Candidate>, String> {
        let config = decode_particle(position, self.space);
        let seed: u64 = rng.random();
        let fitness = evaluate_candidate(
            &config,
            self.train,
            self.folds,
            self.settings,
            self.tau.get().copied(),
            seed,
        );
        Ok(Evaluation {
            fitness: fitness.objectives(),
            solution: Candidate { config, fitness },
        })
    }

    fn calibrate(&self, initial: &mut [Evaluation<Candidate>]) {
        let tau = *self.tau.get_or_init(|| {
            let mut t: Vec<f64> = initial.iter().filter_map(|e| e.solution.fitness.t_avg_s).collect();
            if t.is_empty() {
                return 1.0;
            }
            let m = median(&mut t);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        });
        for e in initial {
            e.solution.fitness = e.solution.fitness.with_tau(tau);
            e.fitness = e.solution.fitness.objectives();
        }
    }
}

/// Swarm settings over the unit cube of `space`.
pub fn default_swarm(space: &SearchSpace, seed: u64) -> SwarmConfig {
    let mut config = SwarmConfig::new(vec![(0.0, 1.0); space.len()]);
    config.n_particles = 10;
    config.iterations = 10;
    config.seed = seed;
    config
}

#[derive(Debug, Clone)]
pub struct CashOutcome {
    pub config: CandidateConfig,
    pub fitness: FitnessVector,
    /// Latency scale in seconds used for `t_norm`.
    pub tau: f64,
    pub archive: Archive<Candidate>,
    pub trace: Vec<TraceRecord<Candidate>>,
    /// Winner refit on the full training table.
    pub model: GbdtModel,
}

/// Searches the space, picks the equal-weight winner from the archive and refits it on
/// all of `train`. `seed` drives the folds and the final refit; the swarm uses
/// `swarm.seed`.
pub fn run_opce_cash(
    train: &DataTable,
    space: &SearchSpace,
    swarm: SwarmConfig,
    settings: &CashSettings,
    seed: u64,
) -> Result<CashOutcome> {
    space.validate()?;
    if swarm.bounds.len() != space.len() {
        return Err(Error::InvalidArgument(format!(
            "swarm has {} dimensions for {} search dimensions",
            swarm.bounds.len(),
            space.len()
        )));
    }
    if settings.timing_passes == 0 {
        return Err(Error::InvalidArgument("timing_passes must be at least 1".into()));
    }
    let folds = crate::dataset::kfold_indices(train, settings.folds, seed)?;
    let problem = CashProblem {
        train,
        folds: &folds,
        space,
        settings,
        tau: OnceLock::new(),
    };
    if let Some(tau) = settings.tau_scale {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau_scale must be positive, got {tau}")));
        }
        problem.tau.set(tau).expect("fresh cell");
    }
    let spec = objective_spec();
    let run = mopso::run(&problem, swarm, spec.clone())?;
    let best = select_final(&run.archive, &spec)?.solution.clone();
    let model = gbdt::train(train, &best.config.hyperparams, best.config.learner_kind, seed)?;
    Ok(CashOutcome {
        config: best.config,
        fitness: best.fitness,
        tau: problem.tau.get().copied().unwrap_or(1.0),
        archive: run.archive,
        trace: run.trace,
        model,
    })
}

/// Writes `iteration,particle,learner,hyperparams,f1,confidence,t_raw_ms,t_norm`.
pub fn write_trace_csv(trace: &[TraceRecord<Candidate>], space: &SearchSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "particle",
        "learner",
        "hyperparams",
        "f1",
        "confidence",
        "t_raw_ms",
        "t_norm",
    ])?;
    for r in trace {
        let c = &r.solution;
        w.write_record([
            r.iteration.to_string(),
            r.particle.to_string(),
            c.config.learner_kind.to_string(),
            c.config.describe(space),
            c.fitness.f1_avg.to_string(),
            c.fitness.confidence_avg.to_string(),
            c.fitness.t_avg_s.map(|t| (t * 1e3).to_string()).unwrap_or_default(),
            c.fitness.t_norm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

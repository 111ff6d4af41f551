//! Multiclass gradient-boosted trees with two learners: an exact second-order learner
//! and a histogram learner with gradient-based one-side sampling (GOSS) and exclusive
//! feature bundling (EFB).
//!
//! Both fit one regression tree per class per round against the softmax gradients and
//! share the model format, so they are interchangeable downstream.

mod bins;
mod efb;
mod exact;
mod goss;
mod histogram;
mod loss;
mod model;
mod tree;

use std::fmt;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::stream_rng;
use crate::{DataTable, Error, Result};

pub use bins::BinMapper;
pub use efb::{efb_bundle, Bundle, BundleMap};
pub use goss::{goss_sample, GossSample};
pub use loss::{leaf_weight, log_loss, softmax, softmax_gradients, split_gain};
pub use model::{argmax_rows, GbdtModel, MODEL_FORMAT, MODEL_VERSION};
pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    ExactSecondOrder,
    HistogramGossEfb,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 2] = [LearnerKind::ExactSecondOrder, LearnerKind::HistogramGossEfb];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::ExactSecondOrder => "exact_second_order",
            LearnerKind::HistogramGossEfb => "histogram_goss_efb",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda_l2: f64,
    pub gamma: f64,
    pub min_child_hessian: f64,
    /// Fraction of rows kept by gradient magnitude.
    pub goss_a: f64,
    /// Fraction of the remaining rows sampled at random.
    pub goss_b: f64,
    pub histogram_bins: usize,
    /// Co-nonzero rows tolerated inside one feature bundle.
    pub efb_conflict_max: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 6,
            lambda_l2: 1.0,
            gamma: 0.0,
            min_child_hessian: 1e-3,
            goss_a: 0.2,
            goss_b: 0.1,
            histogram_bins: 255,
            efb_conflict_max: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1".into());
        }
        for (name, v) in [
            ("lambda_l2", self.lambda_l2),
            ("gamma", self.gamma),
            ("min_child_hessian", self.min_child_hessian),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        goss::validate_fractions(self.goss_a, self.goss_b)?;
        if self.histogram_bins < 2 || self.histogram_bins > u32::MAX as usize / 2 {
            return bad(format!("histogram_bins must be >= 2, got {}", self.histogram_bins));
        }
        Ok(())
    }

    /// Settings under which GOSS keeps every row at weight 1.
    pub fn without_goss(mut self) -> Self {
        self.goss_a = 0.0;
        self.goss_b = 1.0;
        self
    }
}

/// Fits a model. `seed` drives GOSS sampling only; the exact learner is deterministic.
pub fn train(table: &DataTable, hp: &Hyperparams, kind: LearnerKind, seed: u64) -> Result<GbdtModel> {
    train_with_trace(table, hp, kind, seed).map(|(m, _)| m)
}

/// As [`train`], also returning the training log-loss before the first round and after
/// every round.
pub fn train_with_trace(
    table: &DataTable,
    hp: &Hyperparams,
    kind: LearnerKind,
    seed: u64,
) -> Result<(GbdtModel, Vec<f64>)> {
    hp.validate()?;
    let n = table.n_rows();
    let c = table.n_classes();
    let mut counts = vec![0usize; c];
    for &y in table.labels() {
        counts[y] += 1;
    }
    if n < 2 || counts.iter().filter(|&&k| k > 0).count() < 2 {
        return Err(Error::Training(
            "training needs at least two rows from two classes".into(),
        ));
    }
    let base_score: Vec<f64> = counts.iter().map(|&k| (k as f64 / n as f64).max(1e-12).ln()).collect();

    let x = table.features().view();
    let labels = table.labels();
    let mut scores = Array2::from_shape_fn((n, c), |(_, k)| base_score[k]);
    let mut losses = vec![log_loss(labels, scores.view())];
    let mut trees: Vec<Vec<Tree>> = Vec::with_capacity(hp.n_estimators);

    enum Prepared {
        Exact(Vec<Vec<u32>>),
        Histogram {
            mappers: Vec<BinMapper>,
            bundles: BundleMap,
            encoded: Vec<Vec<u32>>,
        },
    }
    let prepared = match kind {
        LearnerKind::ExactSecondOrder => Prepared::Exact(exact::presort(x)),
        LearnerKind::HistogramGossEfb => {
            let mappers: Vec<BinMapper> = (0..x.ncols())
                .into_par_iter()
                .map(|j| BinMapper::fit(x.column(j), hp.histogram_bins))
                .collect();
            let binned: Vec<Vec<u32>> = (0..x.ncols())
                .into_par_iter()
                .map(|j| x.column(j).iter().map(|&v| mappers[j].bin(v)).collect())
                .collect();
            let bundles = efb_bundle(&binned, &mappers, hp.efb_conflict_max);
            let encoded = bundles.encode(&binned);
            Prepared::Histogram {
                mappers,
                bundles,
                encoded,
            }
        }
    };

    for round in 0..hp.n_estimators {
        let (g, h) = softmax_gradients(labels, scores.view());
        let round_trees: Vec<Tree> = match &prepared {
            Prepared::Exact(sorted) => (0..c)
                .into_par_iter()
                .map(|k| {
                    let gk = g.column(k).to_vec();
                    let hk = h.column(k).to_vec();
                    exact::ExactGrower {
                        x,
                        g: &gk,
                        h: &hk,
                        hp,
                        scale: hp.learning_rate,
                    }
                    .grow(sorted.clone())
                })
                .collect(),
            Prepared::Histogram {
                mappers,
                bundles,
                encoded,
            } => {
                let norms: Vec<f64> = g
                    .axis_iter(Axis(0))
                    .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                let mut rng = stream_rng(seed, round as u64);
                let sample = goss_sample(&norms, hp.goss_a, hp.goss_b, &mut rng)?;
                (0..c)
                    .into_par_iter()
                    .map(|k| {
                        let mut gk = vec![0.0; n];
                        let mut hk = vec![0.0; n];
                        for (&r, &w) in sample.indices.iter().zip(&sample.weights) {
                            gk[r as usize] = g[[r as usize, k]] * w;
                            hk[r as usize] = h[[r as usize, k]] * w;
                        }
                        histogram::HistogramGrower {
                            mappers,
                            bundles,
                            encoded,
                            g: &gk,
                            h: &hk,
                            hp,
                            scale: hp.learning_rate,
                        }
                        .grow(sample.indices.clone())
                    })
                    .collect()
            }
        };
        for (k, tree) in round_trees.iter().enumerate() {
            let delta: Vec<f64> = x.axis_iter(Axis(0)).map(|row| tree.predict(row)).collect();
            loss::add_to_column(&mut scores, k, &delta);
        }
        losses.push(log_loss(labels, scores.view()));
        trees.push(round_trees);
    }

    let bundles = match prepared {
        Prepared::Histogram { bundles, .. } => Some(bundles),
        Prepared::Exact(_) => None,
    };
    let model = GbdtModel::new(
        kind,
        table.label_names().to_vec(),
        table.feature_names().to_vec(),
        hp.clone(),
        base_score,
        trees,
        bundles,
    );
    Ok((model, losses))
}

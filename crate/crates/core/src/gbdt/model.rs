use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::efb::BundleMap;
use super::loss::softmax_in_place;
use super::tree::Tree;
use super::{Hyperparams, LearnerKind};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "moo-ids-gbdt";
pub const MODEL_VERSION: u32 = 1;

const PARALLEL_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    format: String,
    version: u32,
    pub learner_kind: LearnerKind,
    pub class_count: usize,
    pub label_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub hyperparams: Hyperparams,
    /// Per-class log prior.
    pub base_score: Vec<f64>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    pub bundles: Option<BundleMap>,
}

impl GbdtModel {
    pub(crate) fn new(
        learner_kind: LearnerKind,
        label_names: Vec<String>,
        feature_names: Vec<String>,
        hyperparams: Hyperparams,
        base_score: Vec<f64>,
        trees: Vec<Vec<Tree>>,
        bundles: Option<BundleMap>,
    ) -> Self {
        GbdtModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            learner_kind,
            class_count: label_names.len(),
            label_names,
            feature_names,
            hyperparams,
            base_score,
            trees,
            bundles,
        }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    fn check_schema(&self, rows: &ArrayView2<'_, f64>) -> Result<()> {
        if rows.ncols() != self.feature_names.len() {
            return Err(Error::Schema(format!(
                "model expects {} features, got {}",
                self.feature_names.len(),
                rows.ncols()
            )));
        }
        Ok(())
    }

    /// Summed class scores before the softmax.
    pub fn predict_raw(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_schema(&rows)?;
        let n = rows.nrows();
        let c = self.class_count;
        let mut out = Array2::from_shape_fn((n, c), |(_, k)| self.base_score[k]);
        let fill = |(i, out_row): (usize, &mut [f64])| {
            let row = rows.row(i);
            for round in &self.trees {
                for (k, tree) in round.iter().enumerate() {
                    out_row[k] += tree.predict(row);
                }
            }
        };
        let flat = out.as_slice_mut().expect("standard layout");
        if n >= PARALLEL_ROWS {
            flat.par_chunks_mut(c).enumerate().for_each(fill);
        } else {
            flat.chunks_mut(c).enumerate().for_each(fill);
        }
        Ok(out)
    }

    /// Class probabilities; every row sums to one.
    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut p = self.predict_raw(rows)?;
        for mut row in p.axis_iter_mut(Axis(0)) {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(p)
    }

    /// Arg-max class per row (lowest class on ties).
    pub fn predict(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(rows)?))
    }

    /// Tree nodes visited when scoring `rows`; a hardware-independent cost measure.
    pub fn node_visits(&self, rows: ArrayView2<'_, f64>) -> Result<u64> {
        self.check_schema(&rows)?;
        Ok(rows
            .axis_iter(Axis(0))
            .map(|row| {
                self.trees
                    .iter()
                    .flatten()
                    .map(|t| t.path_length(row) as u64)
                    .sum::<u64>()
            })
            .sum())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let model: GbdtModel = serde_json::from_slice(bytes)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported model format {:?} version {}",
                model.format, model.version
            )));
        }
        let consistent = model.base_score.len() == model.class_count
            && model.label_names.len() == model.class_count
            && model.trees.iter().all(|r| r.len() == model.class_count);
        if !consistent {
            return Err(Error::Artifact("model class count is inconsistent".into()));
        }
        Ok(model)
    }

    /// Length of the serialized document in bytes.
    pub fn size_bytes(&self) -> Result<usize> {
        Ok(self.to_json()?.len())
    }
}

/// Arg-max per row, lowest index on ties.
pub fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

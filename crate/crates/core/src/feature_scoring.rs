//! Information-gain feature importance.

use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{DataTable, Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_names: Vec<String>,
    /// Information gain in bits.
    pub raw_ig: Vec<f64>,
    /// `raw_ig` scaled to sum to one (uniform when every score is zero).
    pub normalized: Vec<f64>,
}

impl FeatureImportance {
    pub fn from_raw(feature_names: Vec<String>, raw_ig: Vec<f64>) -> Self {
        let total: f64 = raw_ig.iter().sum();
        let normalized = if total > 0.0 {
            raw_ig.iter().map(|r| r / total).collect()
        } else {
            vec![1.0 / raw_ig.len() as f64; raw_ig.len()]
        };
        FeatureImportance {
            feature_names,
            raw_ig,
            normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.raw_ig.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ig.is_empty()
    }

    /// Index of the highest normalized score (lowest index on ties).
    pub fn top_feature(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.normalized.iter().enumerate() {
            if v > self.normalized[best] {
                best = i;
            }
        }
        best
    }

    /// Writes `feature,raw_ig,normalized` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["feature", "raw_ig", "normalized"])?;
        for ((name, raw), norm) in self.feature_names.iter().zip(&self.raw_ig).zip(&self.normalized) {
            w.write_record([name.as_str(), &raw.to_string(), &norm.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Shannon entropy in bits of a label sequence.
pub fn entropy(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    entropy_of_counts(&counts)
}

fn entropy_of_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Equal-frequency binning into at most `bins` bins with compact ids starting at 0.
///
/// When the feature has no more distinct values than `bins`, every distinct value gets
/// its own bin. Otherwise cut points are taken at the `i * n / bins` order statistics;
/// repeated cut points collapse.
pub fn discretize(feature: ArrayView1<'_, f64>, bins: usize) -> Vec<usize> {
    assert!(bins >= 2, "need at least two bins");
    let edges = bin_edges(feature, bins);
    feature.iter().map(|&x| edges.partition_point(|&e| e <= x)).collect()
}

fn bin_edges(feature: ArrayView1<'_, f64>, bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = feature.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mut edges: Vec<f64> = if distinct.len() <= bins {
        distinct[1..].to_vec()
    } else {
        (1..bins).map(|i| sorted[i * n / bins]).collect()
    };
    edges.dedup();
    // An edge at the minimum would leave bin 0 empty.
    edges.retain(|&e| e > sorted[0]);
    edges
}

fn information_gain_of(bins: &[usize], labels: &[usize], n_classes: usize, h_y: f64) -> f64 {
    let n_bins = bins.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; n_bins * n_classes];
    for (&b, &y) in bins.iter().zip(labels) {
        table[b * n_classes + y] += 1;
    }
    let n = labels.len() as f64;
    let conditional: f64 = table
        .chunks(n_classes)
        .map(|row| {
            let nb: usize = row.iter().sum();
            nb as f64 / n * entropy_of_counts(row)
        })
        .sum();
    (h_y - conditional).max(0.0)
}

/// `IG = H(Y) - H(Y | bin(X))` for every feature, normalized to sum to one.
pub fn information_gain(table: &DataTable, bins: usize) -> Result<FeatureImportance> {
    if bins < 2 {
        return Err(Error::InvalidArgument(
            "information gain needs at least two bins".into(),
        ));
    }
    let present = {
        let mut seen = vec![false; table.n_classes()];
        for &l in table.labels() {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(Error::Data("information gain needs at least two classes".into()));
    }
    let labels = table.labels();
    let n_classes = table.n_classes();
    let h_y = entropy(labels);
    let raw: Vec<f64> = (0..table.n_features())
        .into_par_iter()
        .map(|j| {
            let b = discretize(table.features().column(j), bins);
            information_gain_of(&b, labels, n_classes, h_y)
        })
        .collect();
    Ok(FeatureImportance::from_raw(table.feature_names().to_vec(), raw))
}

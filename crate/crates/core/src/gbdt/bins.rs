use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::tree::midpoint;

/// Quantile bin boundaries for one feature, fitted once per training run.
///
/// `bin(x)` is the number of edges `<= x`. When the feature has at most `max_bins`
/// distinct values every value gets its own bin and the edges are midpoints between
/// neighbours, so bin boundaries coincide with the exact learner's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub edges: Vec<f64>,
    /// The single value held by each bin, when binning is exact.
    pub representatives: Option<Vec<f64>>,
}

impl BinMapper {
    pub fn fit(column: ArrayView1<'_, f64>, max_bins: usize) -> Self {
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() <= max_bins {
            let edges = distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
            return BinMapper {
                edges,
                representatives: Some(distinct),
            };
        }
        let n = sorted.len();
        let mut edges: Vec<f64> = Vec::with_capacity(max_bins - 1);
        for i in 1..max_bins {
            let q = sorted[i * n / max_bins];
            // Cut just below q so that q opens a new bin.
            let below = distinct.partition_point(|&v| v < q);
            if below == 0 {
                continue;
            }
            let edge = midpoint(distinct[below - 1], q);
            if edges.last().is_none_or(|&last| edge > last) {
                edges.push(edge);
            }
        }
        BinMapper {
            edges,
            representatives: None,
        }
    }

    #[inline]
    pub fn bin(&self, x: f64) -> u32 {
        self.edges.partition_point(|&e| e <= x) as u32
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// The bin holding 0.0, treated as the "absent" value by bundling.
    pub fn default_bin(&self) -> u32 {
        self.bin(0.0)
    }

    /// Threshold for a split with bin `left` as the last non-empty bin on the left and
    /// `right` as the first non-empty bin on the right.
    pub fn threshold_between(&self, left: usize, right: usize) -> f64 {
        match &self.representatives {
            Some(rep) => midpoint(rep[left], rep[right]),
            None => self.edges[left],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn few_distinct_values_get_one_bin_each() {
        let x = Array1::from(vec![3.0, 1.0, 2.0, 1.0, 3.0]);
        let m = BinMapper::fit(x.view(), 8);
        assert_eq!(m.edges, vec![1.5, 2.5]);
        assert_eq!(m.bin(1.0), 0);
        assert_eq!(m.bin(2.0), 1);
        assert_eq!(m.bin(3.0), 2);
        assert_eq!(m.threshold_between(0, 2), 2.0);
    }

    #[test]
    fn quantile_edges_are_bounded_and_increasing() {
        let x = Array1::from_iter((0..1000).map(|i| (i % 97) as f64 * 0.5));
        let m = BinMapper::fit(x.view(), 16);
        assert!(m.n_bins() <= 16);
        assert!(m.edges.windows(2).all(|w| w[0] < w[1]));
        let counts = x.iter().fold(vec![0usize; m.n_bins()], |mut c, &v| {
            c[m.bin(v) as usize] += 1;
            c
        });
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn two_bins_split_at_the_median_gap() {
        let x = Array1::from(vec![0.0, 0.1, 0.2, 5.0, 5.1, 5.2]);
        let m = BinMapper::fit(x.view(), 2);
        assert_eq!(m.edges.len(), 1);
        assert!(m.edges[0] > 0.2 && m.edges[0] <= 5.0);
    }
}

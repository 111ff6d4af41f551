//! Synthetic inputs shared by the benchmarks.

use moo_ids_core::DataTable;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n_rows` x `n_features` table with `n_classes` Gaussian-ish blobs. Class `c` holds a
/// share proportional to `1 / (c + 1)`, so the table is imbalanced like flow data.
pub fn blobs(n_rows: usize, n_features: usize, n_classes: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n_classes).map(|c| 1.0 / (c + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut labels = Vec::with_capacity(n_rows);
    for (c, w) in weights.iter().enumerate() {
        let n = if c + 1 == n_classes {
            n_rows - labels.len()
        } else {
            (w / total * n_rows as f64) as usize
        };
        labels.extend(std::iter::repeat_n(c, n));
    }
    let centers: Vec<f64> = (0..n_classes * n_features)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let x = Array2::from_shape_fn((n_rows, n_features), |(i, j)| {
        let noise: f64 = (0..3).map(|_| rng.random::<f64>() - 0.5).sum();
        centers[labels[i] * n_features + j] + 2.0 * noise
    });
    DataTable::new(
        (0..n_features).map(|j| format!("f{j}")).collect(),
        x,
        labels,
        (0..n_classes).map(|c| format!("class{c}")).collect(),
    )
    .expect("well-formed blobs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_shape_and_imbalance() {
        let t = blobs(1000, 6, 4, 0);
        assert_eq!(t.n_rows(), 1000);
        assert_eq!(t.n_features(), 6);
        let counts = moo_ids_core::dataset::class_distribution(&t).counts;
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }
}

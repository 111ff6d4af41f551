use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows kept by gradient-based one-side sampling, ascending, with their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossSample {
    pub indices: Vec<u32>,
    pub weights: Vec<f64>,
}

impl GossSample {
    pub fn all(n: usize) -> Self {
        GossSample {
            indices: (0..n as u32).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub(crate) fn validate_fractions(a: f64, b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || !(b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "GOSS fractions must satisfy 0 <= a <= 1 and 0 < b <= 1, got a={a}, b={b}"
        )));
    }
    // a = 1 keeps every row, so b is irrelevant.
    if a < 1.0 && a + b > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!("GOSS needs a + b <= 1, got {}", a + b)));
    }
    Ok(())
}

/// Keeps the `ceil(a n)` rows with the largest gradient norm at weight 1 and a uniform
/// sample of `ceil(b n)` of the rest at weight `(1 - a) / b`.
pub fn goss_sample(g_norms: &[f64], a: f64, b: f64, rng: &mut impl Rng) -> Result<GossSample> {
    validate_fractions(a, b)?;
    let n = g_norms.len();
    let top = ((a * n as f64).ceil() as usize).min(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&i, &j| {
        g_norms[j as usize]
            .abs()
            .total_cmp(&g_norms[i as usize].abs())
            .then(i.cmp(&j))
    });
    let rest = &order[top..];
    let want = ((b * n as f64).ceil() as usize).min(rest.len());
    let omega = if a >= 1.0 { 1.0 } else { (1.0 - a) / b };

    let mut picked: Vec<(u32, f64)> = order[..top].iter().map(|&i| (i, 1.0)).collect();
    if want == rest.len() {
        picked.extend(rest.iter().map(|&i| (i, omega)));
    } else {
        picked.extend(
            index::sample(rng, rest.len(), want)
                .into_iter()
                .map(|k| (rest[k], omega)),
        );
    }
    picked.sort_unstable_by_key(|p| p.0);
    Ok(GossSample {
        indices: picked.iter().map(|p| p.0).collect(),
        weights: picked.iter().map(|p| p.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keeps_every_row_when_a_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = goss_sample(&[0.3, -2.0, 0.1, 0.7], 1.0, 0.01, &mut rng).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3]);
        assert!(s.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn twenty_plus_ten_rows_with_omega_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = goss_sample(&g, 0.2, 0.1, &mut rng).unwrap();
        assert_eq!(s.len(), 30);
        let heavy: Vec<u32> = s
            .indices
            .iter()
            .zip(&s.weights)
            .filter(|(_, &w)| w == 1.0)
            .map(|(&i, _)| i)
            .collect();
        assert_eq!(heavy, (80..100).collect::<Vec<u32>>());
        assert_eq!(s.weights.iter().filter(|&&w| w == 8.0).count(), 10);
    }

    #[test]
    fn rejects_fractions_over_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(goss_sample(&[1.0], 0.6, 0.5, &mut rng).is_err());
        assert!(goss_sample(&[1.0], 0.2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn complementary_fractions_keep_everything_at_weight_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: Vec<f64> = (0..37).map(|i| (i * 7 % 11) as f64).collect();
        let s = goss_sample(&g, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(s, GossSample::all(37));
    }

    #[test]
    fn weighted_gradient_mass_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let total: f64 = g.iter().map(|v| v.abs()).sum();
        let s = goss_sample(&g, 0.2, 0.1, &mut rng).unwrap();
        let approx: f64 = s
            .indices
            .iter()
            .zip(&s.weights)
            .map(|(&i, &w)| w * g[i as usize].abs())
            .sum();
        assert!((approx - total).abs() / total < 0.10, "{approx} vs {total}");
    }
}

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shapiro::shapiro_wilk;
use crate::{DataTable, Error, Result};

/// Significance level above which a feature is treated as Gaussian.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMethod {
    ZScore,
    MinMax,
    Constant,
}

/// Fitted statistics for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalization {
    pub name: String,
    pub method: NormalizationMethod,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    pub sw_p_value: f64,
}

impl FeatureNormalization {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.method {
            NormalizationMethod::ZScore => (x - self.mu) / self.sigma,
            NormalizationMethod::MinMax => (x - self.min) / (self.max - self.min),
            NormalizationMethod::Constant => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPlan {
    pub alpha: f64,
    pub features: Vec<FeatureNormalization>,
}

fn fit_feature(name: &str, column: ArrayView1<'_, f64>, alpha: f64, seed: u64) -> Result<FeatureNormalization> {
    let n = column.len() as f64;
    let mu = column.sum() / n;
    let sigma = (column.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut record = FeatureNormalization {
        name: name.to_string(),
        method: NormalizationMethod::Constant,
        mu,
        sigma,
        min,
        max,
        sw_p_value: 0.0,
    };
    if max == min {
        return Ok(record);
    }
    let values: Vec<f64> = column.to_vec();
    let p = if values.len() >= 3 {
        shapiro_wilk(&values, seed)?.p_value
    } else {
        0.0
    };
    record.sw_p_value = p;
    record.method = if p > alpha && sigma > 0.0 {
        NormalizationMethod::ZScore
    } else {
        NormalizationMethod::MinMax
    };
    Ok(record)
}

/// Chooses z-score or min-max per feature from a Shapiro–Wilk test on the training rows.
pub fn fit_normalization(train: &DataTable, seed: u64) -> Result<NormalizationPlan> {
    fit_normalization_with_alpha(train, DEFAULT_ALPHA, seed)
}

pub fn fit_normalization_with_alpha(train: &DataTable, alpha: f64, seed: u64) -> Result<NormalizationPlan> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty table".into()));
    }
    let features = (0..train.n_features())
        .into_par_iter()
        .map(|j| {
            fit_feature(
                &train.feature_names()[j],
                train.features().column(j),
                alpha,
                seed.wrapping_add(j as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalizationPlan { alpha, features })
}

impl NormalizationPlan {
    /// Transforms a raw feature matrix. Values outside the training range are not clamped.
    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.features.len() {
            return Err(Error::Schema(format!(
                "plan has {} features, input has {}",
                self.features.len(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (v, f) in row.iter_mut().zip(&self.features) {
                *v = f.apply(*v);
            }
        }
        Ok(out)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }
}

/// Applies a fitted plan to a table with the same feature columns.
pub fn apply_normalization(plan: &NormalizationPlan, table: &DataTable) -> Result<DataTable> {
    let names: Vec<&str> = plan.features.iter().map(|f| f.name.as_str()).collect();
    let table_names: Vec<&str> = table.feature_names().iter().map(String::as_str).collect();
    if names != table_names {
        return Err(Error::Schema("table columns differ from the normalization plan".into()));
    }
    table.with_features(plan.transform(table.features())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn single_column(values: &[f64]) -> DataTable {
        let n = values.len();
        DataTable::new(
            vec!["x".into()],
            Array2::from_shape_vec((n, 1), values.to_vec()).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn record(method: NormalizationMethod, values: &[f64]) -> FeatureNormalization {
        let t = single_column(values);
        let mut r = fit_feature("x", t.features().column(0), DEFAULT_ALPHA, 0).unwrap();
        r.method = method;
        r
    }

    #[test]
    fn z_score_of_one_two_three() {
        let r = record(NormalizationMethod::ZScore, &[1.0, 2.0, 3.0]);
        let z: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&x| r.apply(x)).collect();
        let s = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(z[0], -1.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[0], -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn min_max_of_one_two_three_and_no_clamp() {
        let r = record(NormalizationMethod::MinMax, &[1.0, 2.0, 3.0]);
        assert_eq!(r.apply(1.0), 0.0);
        assert_eq!(r.apply(2.0), 0.5);
        assert_eq!(r.apply(3.0), 1.0);
        assert_eq!(r.apply(5.0), 2.0);
    }

    #[test]
    fn method_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gauss = Normal::new(10.0, 2.0).unwrap();
        let g: Vec<f64> = (0..400).map(|_| gauss.sample(&mut rng)).collect();
        // Two well separated modes.
        let bimodal: Vec<f64> = (0..400)
            .map(|i| if i % 2 == 0 { 0.0 } else { 10.0 } + 0.3 * gauss.sample(&mut rng))
            .collect();
        let n = g.len();
        let mut data = Array2::zeros((n, 3));
        for i in 0..n {
            data[[i, 0]] = g[i];
            data[[i, 1]] = bimodal[i];
            data[[i, 2]] = 7.0;
        }
        let t = DataTable::new(
            vec!["g".into(), "bi".into(), "c".into()],
            data,
            (0..n).map(|i| i % 2).collect(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let plan = fit_normalization(&t, 1).unwrap();
        let methods: Vec<_> = plan.features.iter().map(|f| f.method).collect();
        assert_eq!(
            methods,
            vec![
                NormalizationMethod::ZScore,
                NormalizationMethod::MinMax,
                NormalizationMethod::Constant
            ]
        );

        let out = apply_normalization(&plan, &t).unwrap();
        let z = out.features().column(0);
        let mean = z.sum() / n as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-6);
        assert!(out.features().column(2).iter().all(|&v| v == 0.0));
        let mm = out.features().column(1);
        assert_abs_diff_eq!(mm.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_abs_diff_eq!(mm.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn schema_mismatch() {
        let t = single_column(&[1.0, 2.0, 4.0]);
        let plan = fit_normalization(&t, 0).unwrap();
        let other = t.select_columns(&[0, 0]);
        assert!(matches!(apply_normalization(&plan, &other), Err(Error::Schema(_))));
    }

    #[test]
    fn plan_round_trips_through_json() {
        let t = single_column(&[1.0, 2.0, 4.0, 8.0]);
        let plan = fit_normalization(&t, 0).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: NormalizationPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(plan, back);
    }
}

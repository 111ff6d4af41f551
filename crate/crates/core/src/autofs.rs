//! Importance/size trade-off feature selection with a binary particle swarm.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::feature_scoring::FeatureImportance;
use crate::mopso::{
    self, binarize, select_final, Archive, Direction, Evaluation, ObjectiveSpec, Problem, RunOutcome, SwarmConfig,
};
use crate::{DataTable, Error, Result};

/// Position bound for every dimension of the binary swarm. Bits stay stochastic:
/// `sigmoid(±2)` keeps each inclusion probability within about [0.12, 0.88].
pub const POSITION_BOUND: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    bits: Vec<bool>,
    selected_count: usize,
}

impl FeatureMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        let selected_count = bits.iter().filter(|&&b| b).count();
        if selected_count == 0 {
            return Err(Error::InvalidArgument("feature mask selects nothing".into()));
        }
        Ok(FeatureMask { bits, selected_count })
    }

    pub fn all(n: usize) -> Self {
        FeatureMask {
            bits: vec![true; n],
            selected_count: n,
        }
    }

    /// Forces `fallback` on when `bits` is empty.
    pub fn repaired(mut bits: Vec<bool>, fallback: usize) -> Self {
        if !bits.iter().any(|&b| b) {
            bits[fallback] = true;
        }
        FeatureMask::new(bits).expect("repaired mask is non-empty")
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn selected_count(&self) -> usize {
        self.selected_count
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// `(score_importance, score_percentage)`: the summed normalized importance of the
/// selected features and the fraction of features selected.
pub fn autofs_fitness(mask: &FeatureMask, importance: &FeatureImportance) -> Result<[f64; 2]> {
    if mask.len() != importance.len() {
        return Err(Error::InvalidArgument(format!(
            "mask has {} bits, importance has {} scores",
            mask.len(),
            importance.len()
        )));
    }
    let score: f64 = mask
        .bits
        .iter()
        .zip(&importance.normalized)
        .filter(|(&b, _)| b)
        .map(|(_, &v)| v)
        .sum();
    Ok([score.clamp(0.0, 1.0), mask.selected_count as f64 / mask.len() as f64])
}

pub fn objective_spec() -> ObjectiveSpec {
    ObjectiveSpec::equal(&[Direction::Maximize, Direction::Minimize])
}

/// Swarm settings over `n_features` binary dimensions.
pub fn default_swarm(n_features: usize, seed: u64) -> SwarmConfig {
    let mut config = SwarmConfig::new(vec![(-POSITION_BOUND, POSITION_BOUND); n_features]);
    config.seed = seed;
    config
}

struct SelectionProblem<'a> {
    importance: &'a FeatureImportance,
    fallback: usize,
}

impl Problem for SelectionProblem<'_> {
    type Solution = FeatureMask;

    fn evaluate(&self, position: &[f64], rng: &mut ChaCha8Rng) -> std::result::Result<Evaluation<FeatureMask>, String> {
        let mask = FeatureMask::repaired(binarize(position, rng), self.fallback);
        let fitness = autofs_fitness(&mask, self.importance).map_err(|e| e.to_string())?;
        Ok(Evaluation {
            solution: mask,
            fitness: fitness.to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AutofsOutcome {
    pub mask: FeatureMask,
    pub fitness: [f64; 2],
    pub run: RunOutcome<FeatureMask>,
}

impl AutofsOutcome {
    pub fn archive(&self) -> &Archive<FeatureMask> {
        &self.run.archive
    }
}

/// Runs the binary swarm and returns the selected mask with the full archive.
pub fn run_oip_autofs(table: &DataTable, importance: &FeatureImportance, config: SwarmConfig) -> Result<AutofsOutcome> {
    if table.n_features() < 2 {
        return Err(Error::InvalidArgument(
            "feature selection needs at least two features".into(),
        ));
    }
    if table.feature_names() != importance.feature_names.as_slice() {
        return Err(Error::Schema("importance scores do not match the table columns".into()));
    }
    select_from_importance(importance, config)
}

/// The search itself; depends only on the importance scores.
pub fn select_from_importance(importance: &FeatureImportance, config: SwarmConfig) -> Result<AutofsOutcome> {
    if config.bounds.len() != importance.len() {
        return Err(Error::InvalidArgument(format!(
            "swarm has {} dimensions for {} features",
            config.bounds.len(),
            importance.len()
        )));
    }
    let problem = SelectionProblem {
        importance,
        fallback: importance.top_feature(),
    };
    let spec = objective_spec();
    let run = mopso::run(&problem, config, spec.clone())?;
    let best = select_final(&run.archive, &spec)?;
    let mask = best.solution.clone();
    let fitness = [best.fitness[0], best.fitness[1]];
    Ok(AutofsOutcome { mask, fitness, run })
}

/// Keeps the selected columns in their original order.
pub fn apply_mask(table: &DataTable, mask: &FeatureMask) -> Result<DataTable> {
    if mask.len() != table.n_features() {
        return Err(Error::Schema(format!(
            "mask has {} bits, table has {} features",
            mask.len(),
            table.n_features()
        )));
    }
    Ok(table.select_columns(&mask.selected_indices()))
}

/// Writes `feature,normalized_importance,rank` for the selected features, ranked by
/// importance (1 = most important).
pub fn write_selection_csv(mask: &FeatureMask, importance: &FeatureImportance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut selected = mask.selected_indices();
    selected.sort_by(|&a, &b| {
        importance.normalized[b]
            .total_cmp(&importance.normalized[a])
            .then(a.cmp(&b))
    });
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["feature", "normalized_importance", "rank"])?;
    for (rank, &j) in selected.iter().enumerate() {
        w.write_record([
            importance.feature_names[j].as_str(),
            &importance.normalized[j].to_string(),
            &(rank + 1).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_scoring::information_gain;
    use ndarray::Array2;

    fn importance(scores: &[f64]) -> FeatureImportance {
        FeatureImportance::from_raw((0..scores.len()).map(|i| format!("f{i}")).collect(), scores.to_vec())
    }

    fn mask(bits: &[u8]) -> FeatureMask {
        FeatureMask::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn fitness_examples() {
        let imp = importance(&[0.5, 0.3, 0.2]);
        assert_eq!(autofs_fitness(&FeatureMask::all(3), &imp).unwrap(), [1.0, 1.0]);
        let f = autofs_fitness(&mask(&[1, 0, 0]), &imp).unwrap();
        assert!((f[0] - 0.5).abs() < 1e-12 && (f[1] - 1.0 / 3.0).abs() < 1e-12);
        let f = autofs_fitness(&mask(&[1, 1, 0]), &imp).unwrap();
        assert!((f[0] - 0.8).abs() < 1e-12 && (f[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(autofs_fitness(&mask(&[1, 1]), &imp).is_err());
    }

    #[test]
    fn empty_mask_is_repaired_to_top_feature() {
        let m = FeatureMask::repaired(vec![false; 4], 2);
        assert_eq!(m.selected_indices(), vec![2]);
        assert!(FeatureMask::new(vec![false; 3]).is_err());
    }

    #[test]
    fn adding_a_feature_trades_off() {
        let imp = importance(&[0.4, 0.3, 0.2, 0.1]);
        let a = autofs_fitness(&mask(&[1, 0, 1, 0]), &imp).unwrap();
        let b = autofs_fitness(&mask(&[1, 1, 1, 0]), &imp).unwrap();
        assert!(b[0] > a[0] && b[1] > a[1]);
    }

    fn three_column_table() -> DataTable {
        DataTable::new(
            vec!["a".into(), "b".into(), "c".into()],
            Array2::from_shape_fn((12, 3), |(i, j)| (i * (j + 1) % 5) as f64),
            (0..12).map(|i| i % 3).collect(),
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap()
    }

    #[test]
    fn apply_mask_cases() {
        let t = three_column_table();
        assert_eq!(apply_mask(&t, &FeatureMask::all(3)).unwrap(), t);
        let m = apply_mask(&t, &mask(&[1, 0, 1])).unwrap();
        assert_eq!(m.feature_names(), &["a".to_string(), "c".to_string()]);
        assert_eq!(m.features().column(1), t.features().column(2));
        assert!(apply_mask(&t, &mask(&[1, 1])).is_err());
    }

    #[test]
    fn masking_commutes_with_information_gain() {
        let t = three_column_table();
        let full = information_gain(&t, 10).unwrap();
        let m = mask(&[1, 0, 1]);
        let part = information_gain(&apply_mask(&t, &m).unwrap(), 10).unwrap();
        assert_eq!(part.raw_ig, vec![full.raw_ig[0], full.raw_ig[2]]);
    }

    #[test]
    fn duplicate_features_beat_zero_importance_one() {
        let imp = importance(&[0.5, 0.5, 0.0]);
        let mut config = default_swarm(3, 7);
        config.n_particles = 10;
        config.iterations = 20;
        let out = select_from_importance(&imp, config).unwrap();
        assert!(!out.mask.bits()[2]);
        // Enumeration: every mask containing feature 2 is dominated by the same mask without it.
        for code in 1u32..8 {
            let bits: Vec<bool> = (0..3).map(|j| code >> j & 1 == 1).collect();
            if bits[2] && (bits[0] || bits[1]) {
                let with = autofs_fitness(&FeatureMask::new(bits.clone()).unwrap(), &imp).unwrap();
                let mut without = bits.clone();
                without[2] = false;
                let wo = autofs_fitness(&FeatureMask::new(without).unwrap(), &imp).unwrap();
                assert!(mopso::dominates(&wo, &with, &objective_spec()).unwrap());
            }
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let imp = importance(&[0.3, 0.25, 0.2, 0.15, 0.1]);
        let a = select_from_importance(&imp, default_swarm(5, 3)).unwrap();
        let b = select_from_importance(&imp, default_swarm(5, 3)).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.archive(), b.archive());
    }

    #[test]
    fn fitness_stays_in_unit_square() {
        let imp = importance(&[0.9, 0.05, 0.05, 0.0]);
        let out = select_from_importance(&imp, default_swarm(4, 1)).unwrap();
        for r in &out.run.trace {
            assert!(r.fitness.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(r.solution.selected_count() >= 1);
        }
    }
    fn enumerated_front(imp: &FeatureImportance) -> Vec<FeatureMask> {
        let n = imp.len();
        let spec = objective_spec();
        let all: Vec<(FeatureMask, [f64; 2])> = (1u32..(1 << n))
            .map(|code| {
                let m = FeatureMask::new((0..n).map(|j| code >> j & 1 == 1).collect()).unwrap();
                let f = autofs_fitness(&m, imp).unwrap();
                (m, f)
            })
            .collect();
        all.iter()
            .filter(|(_, f)| !all.iter().any(|(_, g)| mopso::dominates(g, f, &spec).unwrap()))
            .map(|(m, _)| m.clone())
            .collect()
    }

    #[test]
    fn archive_usually_matches_enumerated_front() {
        let imp = importance(&[0.31, 0.02, 0.17, 0.09, 0.05, 0.22, 0.11, 0.03]);
        let mut want: Vec<Vec<bool>> = enumerated_front(&imp).iter().map(|m| m.bits().to_vec()).collect();
        want.sort();
        assert_eq!(want.len(), 8);
        let exact = (0..40)
            .filter(|&seed| {
                let out = select_from_importance(&imp, default_swarm(8, seed)).unwrap();
                let mut got: Vec<Vec<bool>> = out
                    .archive()
                    .entries
                    .iter()
                    .map(|e| e.solution.bits().to_vec())
                    .collect();
                got.sort();
                got == want
            })
            .count();
        assert!(exact >= 30, "{exact}/40 runs recovered the front");
    }

    #[test]
    fn single_informative_feature_among_noise() {
        // Feature 0 carries almost all the information; the rest is weak noise.
        let imp = importance(&[0.86, 0.035, 0.03, 0.025, 0.02, 0.015, 0.01, 0.005]);
        let front = enumerated_front(&imp);
        let spec = objective_spec();
        let mut oracle = Archive::new(front.len());
        for m in &front {
            oracle.offer(
                mopso::ArchiveEntry {
                    position: Vec::new(),
                    solution: m.clone(),
                    fitness: autofs_fitness(m, &imp).unwrap().to_vec(),
                },
                &spec,
            );
        }
        let expected = select_final(&oracle, &spec).unwrap().solution.clone();
        let out = select_from_importance(&imp, default_swarm(8, 5)).unwrap();
        assert_eq!(out.mask, expected);
        assert!(out.mask.bits()[0]);
    }
}

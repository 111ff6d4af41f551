use std::collections::BTreeMap;

use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_distribution, ClassDistribution};
use crate::util::stream_rng;
use crate::{DataTable, Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_SMOTE_SHARE: f64 = 0.5;

/// Which classes to oversample and to what size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    /// Half of the mean class count.
    pub threshold: f64,
    pub minority_classes: Vec<usize>,
    /// `floor(threshold)` for every minority class.
    pub target_count: BTreeMap<usize, usize>,
}

/// Classes below half the average class count become minorities, targeted at
/// `floor(threshold)` rows each.
pub fn compute_balance_plan(dist: &ClassDistribution) -> Result<BalancePlan> {
    if dist.n_classes() < 2 {
        return Err(Error::InvalidArgument("balancing needs at least two classes".into()));
    }
    let threshold = dist.total as f64 / dist.n_classes() as f64 / 2.0;
    let target = threshold.floor() as usize;
    let minority_classes: Vec<usize> = dist
        .counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| (c as f64) < threshold)
        .map(|(class, _)| class)
        .collect();
    let target_count = minority_classes.iter().map(|&c| (c, target)).collect();
    Ok(BalancePlan {
        threshold,
        minority_classes,
        target_count,
    })
}

/// How a synthetic row was produced: `base + t * (partner - base)`, indices into the
/// minority matrix that was passed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub base: usize,
    pub partner: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BalanceWarning {
    /// A single-row class cannot be interpolated; its row was duplicated.
    Duplicated { class: Option<usize>, rows: usize },
    /// Every ADASYN neighborhood was pure, so allocation fell back to uniform SMOTE.
    AdasynFallback { class: usize },
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub rows: Array2<f64>,
    pub origins: Vec<Origin>,
    pub warnings: Vec<BalanceWarning>,
}

/// The `keep` nearest rows of row-major `data` (width `dim`) to `q`, as
/// `(squared distance, row)` sorted by distance then row. Row `skip` is ignored.
fn nearest(data: &[f64], dim: usize, q: &[f64], keep: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(keep + 1);
    if keep == 0 {
        return best;
    }
    for (j, r) in data.chunks_exact(dim.max(1)).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let dist: f64 = if dim == 0 {
            0.0
        } else {
            q.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        // Rows arrive in index order, so a tie never displaces an earlier row.
        if best.len() == keep && dist >= best[keep - 1].0 {
            continue;
        }
        let at = best.partition_point(|&(d, _)| d <= dist);
        best.insert(at, (dist, j));
        best.truncate(keep);
    }
    best
}

/// `k` nearest rows of `points` to row `i` (excluding `i`), ties broken by index.
fn neighbors_within(points: ArrayView2<'_, f64>, i: usize, k: usize) -> Vec<usize> {
    let data = points.as_standard_layout();
    let flat = data.as_slice().expect("standard layout");
    let dim = points.ncols();
    let q = &flat[i * dim..(i + 1) * dim];
    nearest(flat, dim, q, k, Some(i)).into_iter().map(|(_, j)| j).collect()
}

fn all_neighbors(points: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<usize>> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| neighbors_within(points, i, k))
        .collect()
}

fn interpolate(points: ArrayView2<'_, f64>, origin: &Origin, out: &mut ndarray::ArrayViewMut1<'_, f64>) {
    let x = points.row(origin.base);
    let xi = points.row(origin.partner);
    for ((o, a), b) in out.iter_mut().zip(x.iter()).zip(xi.iter()) {
        *o = a + origin.t * (b - a);
    }
}

fn materialize(points: ArrayView2<'_, f64>, origins: &[Origin]) -> Array2<f64> {
    let mut rows = Array2::zeros((origins.len(), points.ncols()));
    for (origin, mut row) in origins.iter().zip(rows.axis_iter_mut(Axis(0))) {
        interpolate(points, origin, &mut row);
    }
    rows
}

fn duplicate(points: ArrayView2<'_, f64>, n_new: usize) -> Synthetic {
    let origins = vec![
        Origin {
            base: 0,
            partner: 0,
            t: 0.0
        };
        n_new
    ];
    warn!("minority class has a single row; duplicating it {n_new} times");
    Synthetic {
        rows: materialize(points, &origins),
        origins,
        warnings: vec![BalanceWarning::Duplicated {
            class: None,
            rows: n_new,
        }],
    }
}

/// SMOTE: each synthetic row interpolates a random minority row toward one of its `k`
/// nearest minority neighbors with a uniform `t` in `[0, 1)`.
pub fn smote_generate(minority_rows: ArrayView2<'_, f64>, k: usize, n_new: usize, seed: u64) -> Result<Synthetic> {
    let m = minority_rows.nrows();
    if m == 0 {
        return Err(Error::Data("cannot oversample an empty class".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if m == 1 {
        return Ok(duplicate(minority_rows, n_new));
    }
    let k = k.min(m - 1);
    let neighbors = all_neighbors(minority_rows, k);
    let mut rng = stream_rng(seed, 0);
    let origins: Vec<Origin> = (0..n_new)
        .map(|_| {
            let base = rng.random_range(0..m);
            let nn = &neighbors[base];
            let partner = nn[rng.random_range(0..nn.len())];
            let t: f64 = rng.random();
            Origin { base, partner, t }
        })
        .collect();
    Ok(Synthetic {
        rows: materialize(minority_rows, &origins),
        origins,
        warnings: Vec::new(),
    })
}

/// Splits `total` over `weights` (summing to 1) by largest remainder; ties go to the
/// lower index. The result always sums to `total`.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    if assigned > total {
        // Only reachable through float noise; trim from the largest allocations.
        let mut excess = assigned - total;
        let mut order: Vec<usize> = (0..alloc.len()).collect();
        order.sort_by(|&a, &b| alloc[b].cmp(&alloc[a]).then(a.cmp(&b)));
        for i in order.into_iter().cycle() {
            if excess == 0 {
                break;
            }
            if alloc[i] > 0 {
                alloc[i] -= 1;
                excess -= 1;
            }
        }
        return alloc;
    }
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - alloc[a] as f64;
        let rb = exact[b] - alloc[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        alloc[i] += 1;
    }
    alloc
}

/// Per-row difficulty of a minority class: the share of each row's `k` nearest
/// neighbors (over the whole table) that belong to another class.
pub fn adasyn_difficulty(
    minority_rows: ArrayView2<'_, f64>,
    full_table: &DataTable,
    minority_class: usize,
    k: usize,
) -> Vec<f64> {
    let all = full_table.features().as_standard_layout();
    let flat = all.as_slice().expect("standard layout");
    let dim = all.ncols();
    let labels = full_table.labels();
    (0..minority_rows.nrows())
        .into_par_iter()
        .map(|i| {
            let q: Vec<f64> = minority_rows.row(i).to_vec();
            // Only the k + 1 nearest matter: the row itself plus k neighbors.
            let mut d = nearest(flat, dim, &q, k + 1, None);
            // Drop the row itself (one zero-distance copy of the same class).
            if let Some(pos) = d
                .iter()
                .take_while(|(dist, _)| *dist == 0.0)
                .position(|&(_, j)| labels[j] == minority_class)
            {
                d.remove(pos);
            }
            let kk = k.min(d.len());
            if kk == 0 {
                return 0.0;
            }
            let foreign = d[..kk].iter().filter(|&&(_, j)| labels[j] != minority_class).count();
            foreign as f64 / kk as f64
        })
        .collect()
}

/// ADASYN: synthesis is allocated to minority rows in proportion to how many of their
/// neighbors belong to other classes; each sample then interpolates toward a random
/// minority neighbor.
pub fn adasyn_generate(
    minority_rows: ArrayView2<'_, f64>,
    full_table: &DataTable,
    minority_class: usize,
    k: usize,
    n_new: usize,
    seed: u64,
) -> Result<Synthetic> {
    let m = minority_rows.nrows();
    if m == 0 {
        return Err(Error::Data("cannot oversample an empty class".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if m == 1 {
        return Ok(duplicate(minority_rows, n_new));
    }
    let difficulty = adasyn_difficulty(minority_rows, full_table, minority_class, k);
    let total: f64 = difficulty.iter().sum();
    if total <= 0.0 {
        warn!("class {minority_class}: all ADASYN neighborhoods are pure, using SMOTE allocation");
        let mut s = smote_generate(minority_rows, k, n_new, seed)?;
        s.warnings
            .push(BalanceWarning::AdasynFallback { class: minority_class });
        return Ok(s);
    }
    let weights: Vec<f64> = difficulty.iter().map(|r| r / total).collect();
    let alloc = largest_remainder(&weights, n_new);

    let neighbors = all_neighbors(minority_rows, k.min(m - 1));
    let mut rng = stream_rng(seed, 1);
    let mut origins = Vec::with_capacity(n_new);
    for (base, &count) in alloc.iter().enumerate() {
        let nn = &neighbors[base];
        for _ in 0..count {
            let partner = nn[rng.random_range(0..nn.len())];
            let t: f64 = rng.random();
            origins.push(Origin { base, partner, t });
        }
    }
    Ok(Synthetic {
        rows: materialize(minority_rows, &origins),
        origins,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSettings {
    pub k_neighbors: usize,
    /// Share of each class deficit produced by SMOTE (rounded up); ADASYN makes the rest.
    pub smote_share: f64,
}

impl Default for BalanceSettings {
    fn default() -> Self {
        BalanceSettings {
            k_neighbors: DEFAULT_NEIGHBORS,
            smote_share: DEFAULT_SMOTE_SHARE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalanceRecord {
    pub class: usize,
    pub before: usize,
    pub smote: usize,
    pub adasyn: usize,
    pub after: usize,
}

#[derive(Debug, Clone)]
pub struct BalanceOutcome {
    pub table: DataTable,
    pub records: Vec<ClassBalanceRecord>,
    pub warnings: Vec<BalanceWarning>,
}

fn class_rows(table: &DataTable, class: usize) -> Array2<f64> {
    let idx: Vec<usize> = table
        .labels()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == class)
        .map(|(i, _)| i)
        .collect();
    table.features().select(Axis(0), &idx)
}

/// Hybrid oversampling: SMOTE fills `ceil(share * deficit)` of each minority class, then
/// ADASYN, run against the SMOTE-augmented table, fills the remainder. Majority
/// classes are untouched. Synthetic rows are appended after the original rows.
pub fn balance(train: &DataTable, plan: &BalancePlan, settings: BalanceSettings, seed: u64) -> Result<BalanceOutcome> {
    let dist = class_distribution(train);
    let mut jobs = Vec::new();
    for &class in &plan.minority_classes {
        let before = *dist
            .counts
            .get(class)
            .ok_or_else(|| Error::Schema(format!("balance plan names class {class} absent from the table")))?;
        let target = plan.target_count[&class];
        let deficit = target.saturating_sub(before);
        let smote = ((deficit as f64 * settings.smote_share).ceil() as usize).min(deficit);
        jobs.push(ClassBalanceRecord {
            class,
            before,
            smote,
            adasyn: deficit - smote,
            after: before + deficit,
        });
    }

    let smote_out = jobs
        .par_iter()
        .map(|job| {
            let rows = class_rows(train, job.class);
            smote_generate(
                rows.view(),
                settings.k_neighbors,
                job.smote,
                seed.wrapping_add(job.class as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut augmented = train.clone();
    for (job, s) in jobs.iter().zip(smote_out) {
        augmented = augmented.append_rows(&s.rows, job.class)?;
        warnings.extend(tag_class(s.warnings, job.class));
    }

    let adasyn_out = jobs
        .par_iter()
        .map(|job| {
            let rows = class_rows(&augmented, job.class);
            adasyn_generate(
                rows.view(),
                &augmented,
                job.class,
                settings.k_neighbors,
                job.adasyn,
                seed.wrapping_add(job.class as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = augmented.clone();
    for (job, s) in jobs.iter().zip(adasyn_out) {
        table = table.append_rows(&s.rows, job.class)?;
        warnings.extend(tag_class(s.warnings, job.class));
    }
    Ok(BalanceOutcome {
        table,
        records: jobs,
        warnings,
    })
}

fn tag_class(warnings: Vec<BalanceWarning>, class: usize) -> impl Iterator<Item = BalanceWarning> {
    warnings.into_iter().map(move |w| match w {
        BalanceWarning::Duplicated { rows, .. } => BalanceWarning::Duplicated {
            class: Some(class),
            rows,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn plan_from_first_dataset_counts() {
        let dist = ClassDistribution::from_counts(vec![14569, 2430, 1728, 1579, 1024, 82, 28]);
        let plan = compute_balance_plan(&dist).unwrap();
        assert_eq!(plan.threshold.floor(), 1531.0);
        assert_eq!(plan.minority_classes, vec![4, 5, 6]);
        assert!(plan.target_count.values().all(|&t| t == 1531));
    }

    #[test]
    fn plan_from_second_dataset_counts() {
        let dist = ClassDistribution::from_counts(vec![1629, 16637, 2961, 2389, 1415]);
        let plan = compute_balance_plan(&dist).unwrap();
        assert_eq!(plan.threshold.floor(), 2503.0);
        assert_eq!(plan.minority_classes, vec![0, 3, 4]);
        assert!(plan.target_count.values().all(|&t| t == 2503));
    }

    #[test]
    fn balanced_counts_have_no_minority() {
        let plan = compute_balance_plan(&ClassDistribution::from_counts(vec![100, 100])).unwrap();
        assert!(plan.minority_classes.is_empty());
        assert!(compute_balance_plan(&ClassDistribution::from_counts(vec![5])).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let pts = array![[0.0, 0.0], [2.0, 4.0]];
        let mut out = ndarray::Array1::zeros(2);
        interpolate(
            pts.view(),
            &Origin {
                base: 0,
                partner: 1,
                t: 0.0,
            },
            &mut out.view_mut(),
        );
        assert_eq!(out.to_vec(), vec![0.0, 0.0]);
        interpolate(
            pts.view(),
            &Origin {
                base: 0,
                partner: 1,
                t: 1.0,
            },
            &mut out.view_mut(),
        );
        assert_eq!(out.to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn smote_produces_requested_rows() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let s = smote_generate(pts.view(), 5, 17, 3).unwrap();
        assert_eq!(s.rows.nrows(), 17);
        assert!(s.origins.iter().all(|o| o.base != o.partner));
        let again = smote_generate(pts.view(), 5, 17, 3).unwrap();
        assert_eq!(s.rows, again.rows);
    }

    #[test]
    fn smote_single_row_duplicates() {
        let pts = array![[3.0, 4.0]];
        let s = smote_generate(pts.view(), 5, 3, 0).unwrap();
        assert_eq!(s.rows, array![[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn largest_remainder_oracle() {
        assert_eq!(largest_remainder(&[0.8, 0.2], 10), vec![8, 2]);
        // 7 * (0.5, 0.3, 0.2) = (3.5, 2.1, 1.4): floors (3, 2, 1), one unit to the 0.5 remainder.
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 7), vec![4, 2, 1]);
        // Equal remainders: lower index wins.
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
    }

    #[test]
    fn row_surrounded_by_majority_is_fully_difficult() {
        // Minority row 0 at the origin ringed by majority rows; minority row 1 far away.
        let features = array![
            [0.0, 0.0],
            [100.0, 100.0],
            [1.0, 0.0],
            [-1.0, 0.0],
            [0.0, 1.0],
            [0.0, -1.0],
            [1.0, 1.0]
        ];
        let labels = vec![1, 1, 0, 0, 0, 0, 0];
        let t = DataTable::new(
            vec!["a".into(), "b".into()],
            features.clone(),
            labels,
            vec!["maj".into(), "min".into()],
        )
        .unwrap();
        let minority = features.select(Axis(0), &[0, 1]);
        let r = adasyn_difficulty(minority.view(), &t, 1, 5);
        assert_eq!(r[0], 1.0);
        let s = adasyn_generate(minority.view(), &t, 1, 5, 9, 0).unwrap();
        assert_eq!(s.rows.nrows(), 9);
    }

    #[test]
    fn adasyn_falls_back_when_neighborhoods_are_pure() {
        let features = array![[0.0], [0.1], [0.2], [50.0], [50.1]];
        let t = DataTable::new(
            vec!["a".into()],
            features.clone(),
            vec![1, 1, 1, 0, 0],
            vec!["maj".into(), "min".into()],
        )
        .unwrap();
        let minority = features.select(Axis(0), &[0, 1, 2]);
        let s = adasyn_generate(minority.view(), &t, 1, 2, 4, 0).unwrap();
        assert_eq!(s.rows.nrows(), 4);
        assert_eq!(s.warnings, vec![BalanceWarning::AdasynFallback { class: 1 }]);
    }

    #[test]
    fn balance_leaves_majority_alone() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            rows.push([i as f64, (i % 7) as f64]);
            labels.push(0);
        }
        for i in 0..5 {
            rows.push([i as f64 * 0.5, 3.0 + i as f64]);
            labels.push(1);
        }
        let n = rows.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| rows[i][j]);
        let t = DataTable::new(
            vec!["a".into(), "b".into()],
            features,
            labels,
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let plan = compute_balance_plan(&class_distribution(&t)).unwrap();
        assert_eq!(plan.minority_classes, vec![1]);
        let out = balance(&t, &plan, BalanceSettings::default(), 1).unwrap();
        let counts = class_distribution(&out.table).counts;
        assert_eq!(counts, vec![60, 16]);
        assert_eq!(out.records[0].smote, 6);
        assert_eq!(out.records[0].adasyn, 5);
        // Original rows come first, unchanged.
        assert_eq!(out.table.select_rows(&(0..n).collect::<Vec<_>>()), t);
    }
}

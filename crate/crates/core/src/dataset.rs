//! Loading, validating, sampling and splitting labeled flow-feature tables.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::{median, round_half_up, sha256_hex, stream_rng};
use crate::{Error, Result};

/// Numeric feature matrix plus an encoded label column.
///
/// Immutable after construction; every stage produces a new table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    feature_names: Vec<String>,
    features: Array2<f64>,
    labels: Vec<usize>,
    label_names: Vec<String>,
}

impl DataTable {
    /// Builds a table, checking shape, finiteness and label-id ranges.
    pub fn new(
        feature_names: Vec<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Schema(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::Schema(format!(
                "{} feature columns but {} names",
                features.ncols(),
                feature_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::Schema(format!(
                "label id {bad} has no name ({} label names)",
                label_names.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature matrix contains non-finite values".into()));
        }
        Ok(DataTable {
            feature_names,
            features,
            labels,
            label_names,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `indices`, in the given order. Label names are kept even when a class
    /// disappears from the selection so ids stay stable.
    pub fn select_rows(&self, indices: &[usize]) -> DataTable {
        DataTable {
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> DataTable {
        DataTable {
            feature_names: indices.iter().map(|&j| self.feature_names[j].clone()).collect(),
            features: self.features.select(Axis(1), indices),
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
        }
    }

    /// Same labels and names with a replacement feature matrix of identical shape.
    pub fn with_features(&self, features: Array2<f64>) -> Result<DataTable> {
        if features.dim() != self.features.dim() {
            return Err(Error::Schema(format!(
                "replacement features have shape {:?}, expected {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        DataTable::new(
            self.feature_names.clone(),
            features,
            self.labels.clone(),
            self.label_names.clone(),
        )
    }

    /// Appends rows (all of class `label`) at the bottom of the table.
    pub fn append_rows(&self, rows: &Array2<f64>, label: usize) -> Result<DataTable> {
        if rows.ncols() != self.n_features() {
            return Err(Error::Schema(format!(
                "appended rows have {} columns, expected {}",
                rows.ncols(),
                self.n_features()
            )));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), rows.view()])
            .map_err(|e| Error::Schema(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend(std::iter::repeat_n(label, rows.nrows()));
        DataTable::new(self.feature_names.clone(), features, labels, self.label_names.clone())
    }

    /// Row indices grouped by class id.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Content digest over names, labels and the bit patterns of every feature value.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.features.len() * 8 + self.labels.len() * 8);
        for name in &self.feature_names {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
        }
        for name in &self.label_names {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
        }
        for &l in &self.labels {
            bytes.extend_from_slice(&(l as u64).to_le_bytes());
        }
        for v in self.features.iter() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Reads a comma-separated file with a header row into a [`DataTable`].
///
/// Labels are factorized in order of first appearance. Non-finite cells are repaired per
/// column: `+inf`/`-inf` become the largest/smallest finite value, NaN or empty cells
/// become the median of the finite values.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<DataTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<DataTable> {
    read_table(reader, label_column, true).map(|(t, _)| t)
}

/// Like [`load_csv`], but a missing label column is allowed: every row then gets the
/// single label `"?"`. The flag tells whether the file was labelled.
pub fn load_csv_for_scoring(path: impl AsRef<Path>, label_column: &str) -> Result<(DataTable, bool)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, label_column, false)
}

fn read_table<R: Read>(reader: R, label_column: &str, require_label: bool) -> Result<(DataTable, bool)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers.iter().position(|h| h == label_column.trim());
    if label_idx.is_none() && require_label {
        return Err(Error::Data(format!("label column {label_column:?} not in header")));
    }
    let label_idx = label_idx.unwrap_or(usize::MAX);

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n_features = feature_names.len();

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_features];
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();

    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let mut col = 0;
        if label_idx == usize::MAX {
            labels.push(0);
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                let name = cell.trim().to_string();
                let next = label_ids.len();
                let id = *label_ids.entry(name.clone()).or_insert_with(|| {
                    label_names.push(name);
                    next
                });
                labels.push(id);
            } else {
                columns[col].push(parse_cell(cell).ok_or_else(|| {
                    Error::Data(format!(
                        "row {}: column {:?} value {cell:?} is not numeric",
                        row_no + 2,
                        feature_names[col]
                    ))
                })?);
                col += 1;
            }
        }
    }

    for (name, column) in feature_names.iter().zip(columns.iter_mut()) {
        repair_non_finite(column).map_err(|_| Error::Data(format!("column {name:?} has no finite values")))?;
    }

    let n_rows = labels.len();
    let mut features = Array2::zeros((n_rows, n_features));
    for (j, column) in columns.iter().enumerate() {
        for (i, &v) in column.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let labelled = label_idx != usize::MAX;
    if !labelled {
        label_names.push("?".to_string());
    }
    Ok((DataTable::new(feature_names, features, labels, label_names)?, labelled))
}

/// Writes the table with a trailing label column holding label names.
pub fn write_csv(table: &DataTable, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = table.feature_names().iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for (row, &label) in table.features().outer_iter().zip(table.labels()) {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        record.push(table.label_names()[label].clone());
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(f64::NAN);
    }
    cell.parse::<f64>().ok()
}

/// Replaces ±inf by the finite max/min and NaN by the finite median, in place.
///
/// Errors when the column holds no finite value at all. Identity on all-finite input.
pub fn repair_non_finite(column: &mut [f64]) -> std::result::Result<(), ()> {
    if column.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let mut finite: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(());
    }
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(&mut finite);
    for v in column.iter_mut() {
        if v.is_nan() {
            *v = med;
        } else if *v == f64::INFINITY {
            *v = max;
        } else if *v == f64::NEG_INFINITY {
            *v = min;
        }
    }
    Ok(())
}

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    /// Indexed by class id.
    pub counts: Vec<usize>,
    pub total: usize,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        ClassDistribution { counts, total }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }
}

pub fn class_distribution(table: &DataTable) -> ClassDistribution {
    let mut counts = vec![0; table.n_classes()];
    for &l in table.labels() {
        counts[l] += 1;
    }
    ClassDistribution::from_counts(counts)
}

/// Apportions `round(fraction * total)` units over classes by largest remainder, so
/// every class receives `floor` or `ceil` of its exact share. Ties go to the lower id.
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = round_half_up(fraction * total as f64);
    let exact: Vec<f64> = sizes.iter().map(|&s| fraction * s as f64).collect();
    // Snap values within float noise of an integer so 0.2 * 2030 is exactly 406.
    let snapped: Vec<f64> = exact
        .iter()
        .map(|&x| if (x - x.round()).abs() < 1e-9 { x.round() } else { x })
        .collect();
    let mut alloc: Vec<usize> = snapped.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = snapped[a] - snapped[a].floor();
        let fb = snapped[b] - snapped[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        alloc[c] += 1;
    }
    alloc
}

fn check_fraction(fraction: f64, upper_inclusive: bool) -> Result<()> {
    let ok = fraction > 0.0 && (fraction < 1.0 || (upper_inclusive && fraction == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1{}",
            if upper_inclusive { "]" } else { ")" }
        )))
    }
}

/// Class-stratified random subset. Every present class keeps at least one row.
pub fn stratified_sample(table: &DataTable, fraction: f64, seed: u64) -> Result<DataTable> {
    check_fraction(fraction, true)?;
    let groups = table.rows_by_class();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = apportion(&sizes, fraction);
    let mut chosen = Vec::new();
    for (c, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let take = alloc[c].clamp(1, rows.len());
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut stream_rng(seed, c as u64));
        chosen.extend_from_slice(&shuffled[..take]);
    }
    chosen.sort_unstable();
    Ok(table.select_rows(&chosen))
}

/// Stratified hold-out split; returns `(train, test)` with rows in original order.
pub fn train_test_split(table: &DataTable, test_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    let (train, test) = train_test_indices(table, test_fraction, seed)?;
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// Row indices of a stratified hold-out split, `(train, test)`.
pub fn train_test_indices(table: &DataTable, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(test_fraction, false)?;
    let groups = table.rows_by_class();
    if let Some(c) = groups.iter().position(|g| g.len() == 1) {
        return Err(Error::Data(format!(
            "class {:?} has a single sample and cannot be split",
            table.label_names()[c]
        )));
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = apportion(&sizes, test_fraction);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let n_test = alloc[c].clamp(1, rows.len() - 1);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut stream_rng(seed, c as u64));
        test.extend_from_slice(&shuffled[..n_test]);
        train.extend_from_slice(&shuffled[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// A class that had fewer rows than folds during [`kfold_indices`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldWarning {
    pub class: usize,
    pub size: usize,
    pub k: usize,
}

/// Stratified K-fold assignment of every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of_row: Vec<usize>,
    pub k: usize,
    pub warnings: Vec<FoldWarning>,
}

impl FoldAssignment {
    /// `(train_rows, validation_rows)` for fold `i`.
    pub fn split(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (row, &f) in self.fold_of_row.iter().enumerate() {
            if f == i {
                valid.push(row);
            } else {
                train.push(row);
            }
        }
        (train, valid)
    }
}

/// Stratified K-fold: each class is shuffled and dealt round-robin over the folds.
///
/// Each class starts dealing where the previous one stopped, which keeps total fold
/// sizes within one row of each other. Classes smaller than `k` are still dealt
/// round-robin (their rows land in distinct folds) and produce a [`FoldWarning`].
pub fn kfold_indices(table: &DataTable, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}; need at least 2 folds")));
    }
    let mut fold_of_row = vec![0; table.n_rows()];
    let mut warnings = Vec::new();
    let mut cursor = 0;
    for (c, rows) in table.rows_by_class().into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            warn!(
                "class {:?} has {} rows, fewer than {k} folds",
                table.label_names()[c],
                rows.len()
            );
            warnings.push(FoldWarning {
                class: c,
                size: rows.len(),
                k,
            });
        }
        let mut shuffled = rows;
        shuffled.shuffle(&mut stream_rng(seed, c as u64));
        for row in shuffled {
            fold_of_row[row] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldAssignment {
        fold_of_row,
        k,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn table_with_counts(counts: &[usize]) -> DataTable {
        let n: usize = counts.iter().sum();
        let mut labels = Vec::with_capacity(n);
        for (c, &k) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, k));
        }
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        DataTable::new(
            vec!["a".into(), "b".into()],
            features,
            labels,
            (0..counts.len()).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    fn counts_of(t: &DataTable) -> Vec<usize> {
        class_distribution(t).counts
    }

    #[test]
    fn csv_factorizes_labels_in_first_appearance_order() {
        let csv = "x,Label\n1,A\n2,B\n3,A\n";
        let t = read_csv(csv.as_bytes(), "Label").unwrap();
        assert_eq!(t.labels(), &[0, 1, 0]);
        assert_eq!(t.label_names(), &["A".to_string(), "B".to_string()]);
        assert_eq!(t.feature_names(), &["x".to_string()]);
    }

    #[test]
    fn csv_repairs_infinities_with_column_extremes() {
        let csv = "x,y,Label\n1.0,-inf,A\ninf,5,B\n3.0,2,A\n";
        let t = read_csv(csv.as_bytes(), "Label").unwrap();
        assert_eq!(t.features().column(0).to_vec(), vec![1.0, 3.0, 3.0]);
        assert_eq!(t.features().column(1).to_vec(), vec![2.0, 5.0, 2.0]);
    }

    #[test]
    fn csv_repairs_nan_and_empty_with_finite_median() {
        let csv = "x,Label\n1.0,A\nNaN,B\n3.0,A\n,B\n";
        let t = read_csv(csv.as_bytes(), "Label").unwrap();
        // Oracle: median of the finite subset {1, 3}.
        let finite = [1.0, 3.0];
        let oracle = (finite[0] + finite[1]) / 2.0;
        assert_eq!(t.features().column(0).to_vec(), vec![1.0, oracle, 3.0, oracle]);
    }

    #[test]
    fn csv_trims_header_whitespace() {
        let csv = " Flow Duration, Label\n1,A\n";
        let t = read_csv(csv.as_bytes(), "Label").unwrap();
        assert_eq!(t.feature_names(), &["Flow Duration".to_string()]);
    }

    #[test]
    fn csv_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = table_with_counts(&[3, 2]);
        write_csv(&t, &path, "Label").unwrap();
        assert_eq!(load_csv(&path, "Label").unwrap(), t);
        let (same, labelled) = load_csv_for_scoring(&path, "Label").unwrap();
        assert!(labelled);
        assert_eq!(same, t);
    }

    #[test]
    fn scoring_loader_accepts_missing_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        std::fs::write(&path, "x,y\n1,2\n3,4\n").unwrap();
        let (t, labelled) = load_csv_for_scoring(&path, "Label").unwrap();
        assert!(!labelled);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.labels(), &[0, 0]);
        assert_eq!(t.feature_names().len(), 2);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            read_csv("x,y\n1,2\n".as_bytes(), "Label"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            read_csv("x,Label\nNaN,A\ninf,B\n".as_bytes(), "Label"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            read_csv("x,Label\n1,A\n2\n".as_bytes(), "Label"),
            Err(Error::Csv(_))
        ));
        assert!(matches!(
            read_csv("x,Label\nabc,A\n".as_bytes(), "Label"),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn repair_is_identity_on_finite_data() {
        let mut col = vec![3.0, -1.0, 2.5];
        repair_non_finite(&mut col).unwrap();
        assert_eq!(col, vec![3.0, -1.0, 2.5]);
    }

    #[test]
    fn class_distribution_tallies() {
        let t = table_with_counts(&[5]);
        assert_eq!(
            class_distribution(&t),
            ClassDistribution {
                counts: vec![5],
                total: 5
            }
        );
    }

    #[test]
    fn stratified_sample_counts() {
        let t = table_with_counts(&[100, 10]);
        let s = stratified_sample(&t, 0.5, 7).unwrap();
        assert_eq!(counts_of(&s), vec![50, 5]);
        let again = stratified_sample(&t, 0.5, 7).unwrap();
        assert_eq!(s, again);
        let full = stratified_sample(&t, 1.0, 3).unwrap();
        assert_eq!(full, t);
        assert!(stratified_sample(&t, 0.0, 1).is_err());
        assert!(stratified_sample(&t, 1.5, 1).is_err());
    }

    #[test]
    fn stratified_sample_keeps_at_least_one_row_per_class() {
        let t = table_with_counts(&[1000, 2]);
        let s = stratified_sample(&t, 0.01, 1).unwrap();
        assert_eq!(counts_of(&s), vec![10, 1]);
    }

    #[test]
    fn split_single_class() {
        let t = table_with_counts(&[10]);
        let (train, test) = train_test_split(&t, 0.2, 1).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (8, 2));
    }

    #[test]
    fn split_rejects_singleton_class() {
        let t = table_with_counts(&[10, 1]);
        assert!(matches!(train_test_split(&t, 0.2, 1), Err(Error::Data(_))));
    }

    #[test]
    fn split_small_class_keeps_both_sides() {
        let t = table_with_counts(&[100, 2]);
        let (train, test) = train_test_split(&t, 0.2, 1).unwrap();
        assert_eq!(counts_of(&train)[1], 1);
        assert_eq!(counts_of(&test)[1], 1);
    }

    #[test]
    fn split_hits_rounded_total() {
        // Composition of the 26,800-row subset; per-class shares round to 5,359 in total,
        // so one class takes the extra row to reach round(0.2 * 26,800) = 5,360.
        let counts = [18225, 3042, 2180, 1966, 1255, 96, 36];
        let t = table_with_counts(&counts);
        let (train, test) = train_test_split(&t, 0.2, 42).unwrap();
        assert_eq!(test.n_rows(), 5360);
        assert_eq!(train.n_rows(), 26800 - 5360);
        for (c, (&size, &n_test)) in counts.iter().zip(&counts_of(&test)).enumerate() {
            let exact = 0.2 * size as f64;
            assert!((n_test as f64 - exact).abs() < 1.0, "class {c}: {n_test} vs {exact}");
        }
        // Infiltration: 36 * 0.2 = 7.2 -> 7 held out.
        assert_eq!(counts_of(&test)[6], 7);
    }

    #[test]
    fn kfold_one_row_per_class_per_fold() {
        let t = table_with_counts(&[5, 5]);
        let folds = kfold_indices(&t, 5, 3).unwrap();
        for i in 0..5 {
            let (_, valid) = folds.split(i);
            let mut classes: Vec<usize> = valid.iter().map(|&r| t.labels()[r]).collect();
            classes.sort();
            assert_eq!(classes, vec![0, 1]);
        }
        assert!(folds.warnings.is_empty());
    }

    #[test]
    fn kfold_small_class_round_robin() {
        let t = table_with_counts(&[20, 3]);
        let folds = kfold_indices(&t, 5, 3).unwrap();
        let mut small: Vec<usize> = (20..23).map(|r| folds.fold_of_row[r]).collect();
        small.sort();
        small.dedup();
        assert_eq!(small.len(), 3);
        assert_eq!(
            folds.warnings,
            vec![FoldWarning {
                class: 1,
                size: 3,
                k: 5
            }]
        );
        assert!(kfold_indices(&t, 1, 0).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let t = table_with_counts(&[3, 3]);
        let mut f = t.features().clone();
        f[[0, 0]] = 0.5;
        let u = t.with_features(f).unwrap();
        assert_ne!(t.digest(), u.digest());
        assert_eq!(t.digest(), t.clone().digest());
    }

    #[test]
    fn new_rejects_bad_shapes() {
        let err = DataTable::new(vec!["a".into()], array![[1.0], [2.0]], vec![0], vec!["x".into()]);
        assert!(err.is_err());
        let err = DataTable::new(vec!["a".into()], array![[f64::NAN]], vec![0], vec!["x".into()]);
        assert!(err.is_err());
        let err = DataTable::new(vec!["a".into()], array![[1.0]], vec![3], vec!["x".into()]);
        assert!(err.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn folds_partition_rows(
                counts in proptest::collection::vec(1usize..40, 1..5),
                k in 2usize..7,
                seed in any::<u64>(),
            ) {
                let t = table_with_counts(&counts);
                let folds = kfold_indices(&t, k, seed).unwrap();
                let mut seen = vec![0usize; t.n_rows()];
                for i in 0..k {
                    let (train, valid) = folds.split(i);
                    prop_assert_eq!(train.len() + valid.len(), t.n_rows());
                    for r in valid { seen[r] += 1; }
                }
                prop_assert!(seen.iter().all(|&s| s == 1));
                // Per-class fold sizes differ by at most one.
                for (c, rows) in t.rows_by_class().iter().enumerate() {
                    let mut per_fold = vec![0usize; k];
                    for &r in rows { per_fold[folds.fold_of_row[r]] += 1; }
                    let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
                    prop_assert!(hi - lo <= 1, "class {} folds {:?}", c, per_fold);
                }
                prop_assert_eq!(&folds, &kfold_indices(&t, k, seed).unwrap());
            }

            #[test]
            fn split_is_stratified_and_disjoint(
                counts in proptest::collection::vec(2usize..200, 1..6),
                frac in 0.05f64..0.95,
                seed in any::<u64>(),
            ) {
                let t = table_with_counts(&counts);
                let (train, test) = train_test_indices(&t, frac, seed).unwrap();
                prop_assert_eq!(train.len() + test.len(), t.n_rows());
                let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), t.n_rows());
                let test_table = t.select_rows(&test);
                for (c, &n) in class_distribution(&test_table).counts.iter().enumerate() {
                    let size = counts[c];
                    let exact = frac * size as f64;
                    let unclamped = (n as f64 - exact).abs() < 1.0;
                    let clamped = n == 1 || n == size - 1;
                    prop_assert!(unclamped || clamped, "class {} got {} of {}", c, n, size);
                }
                prop_assert_eq!((train.clone(), test.clone()), train_test_indices(&t, frac, seed).unwrap());
            }
        }
    }
}

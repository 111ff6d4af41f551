//! Classification, confidence and calibration metrics plus the final report.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::gbdt::GbdtModel;
use crate::util::median;
use crate::{Error, Result};

pub const ECE_BINS: usize = 15;
pub const REPORT_FORMAT: &str = "moo-ids-report";
pub const REPORT_VERSION: u32 = 1;

/// Row sums of a probability matrix may deviate from one by this much.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// The class was never predicted; `precision` is reported as 0.
    pub precision_undefined: bool,
    /// The class never occurs; `recall` is reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

pub fn confusion_matrix(labels: &[usize], predictions: &[usize], class_count: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(labels.len(), predictions.len(), "labels and predictions")?;
    let mut m = vec![vec![0; class_count]; class_count];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= class_count || p >= class_count {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {class_count} classes",
                y.max(p)
            )));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Per-class and support-weighted precision, recall and F1. Undefined ratios are 0 and
/// flagged rather than treated as errors.
pub fn classification_metrics(
    labels: &[usize],
    predictions: &[usize],
    class_count: usize,
) -> Result<ClassificationMetrics> {
    let confusion = confusion_matrix(labels, predictions, class_count)?;
    let n = labels.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };

    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            precision_undefined: predicted == 0,
            recall_undefined: support == 0,
        });
    }
    let weighted = |get: fn(&ClassMetrics) -> f64| -> f64 {
        if n == 0 {
            return 0.0;
        }
        per_class.iter().map(|m| get(m) * m.support as f64).sum::<f64>() / n as f64
    };
    let correct: usize = (0..class_count).map(|c| confusion[c][c]).sum();
    Ok(ClassificationMetrics {
        accuracy: ratio(correct, n),
        precision_weighted: weighted(|m| m.precision),
        recall_weighted: weighted(|m| m.recall),
        f1_weighted: weighted(|m| m.f1),
        per_class,
        confusion,
    })
}

fn check_probabilities(p: &ArrayView2<'_, f64>, predictions: &[usize], labels: &[usize]) -> Result<()> {
    check_lengths(p.nrows(), predictions.len(), "probabilities and predictions")?;
    check_lengths(p.nrows(), labels.len(), "probabilities and labels")?;
    for (i, row) in p.outer_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(format!(
                "probability row {i} is not normalized (sum {sum})"
            )));
        }
    }
    if let Some(&c) = predictions.iter().chain(labels).find(|&&c| c >= p.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "class index {c} out of range for {} columns",
            p.ncols()
        )));
    }
    Ok(())
}

/// Mean probability of the predicted class and mean probability of the true class.
pub fn confidence_metrics(
    probabilities: ArrayView2<'_, f64>,
    predictions: &[usize],
    labels: &[usize],
) -> Result<(f64, f64)> {
    check_probabilities(&probabilities, predictions, labels)?;
    let n = labels.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let (mut pred, mut truth) = (0.0, 0.0);
    for i in 0..n {
        pred += probabilities[[i, predictions[i]]];
        truth += probabilities[[i, labels[i]]];
    }
    Ok((pred / n as f64, truth / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// 0 for an empty bin.
    pub mean_confidence: f64,
    /// 0 for an empty bin.
    pub accuracy: f64,
}

/// Equal-width reliability bins over the predicted-class probability. Bin `b` covers
/// `(b/B, (b+1)/B]`; the first bin also takes confidence 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    pub fn compute(
        probabilities: ArrayView2<'_, f64>,
        predictions: &[usize],
        labels: &[usize],
        n_bins: usize,
    ) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 calibration bins, got {n_bins}"
            )));
        }
        check_probabilities(&probabilities, predictions, labels)?;
        let mut count = vec![0usize; n_bins];
        let mut conf = vec![0.0; n_bins];
        let mut hits = vec![0usize; n_bins];
        for i in 0..labels.len() {
            let c = probabilities[[i, predictions[i]]];
            let b = ((c * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
            count[b] += 1;
            conf[b] += c;
            hits[b] += usize::from(predictions[i] == labels[i]);
        }
        let bins = (0..n_bins)
            .map(|b| {
                let k = count[b];
                CalibrationBin {
                    lower: b as f64 / n_bins as f64,
                    upper: (b + 1) as f64 / n_bins as f64,
                    count: k,
                    mean_confidence: if k > 0 { conf[b] / k as f64 } else { 0.0 },
                    accuracy: if k > 0 { hits[b] as f64 / k as f64 } else { 0.0 },
                }
            })
            .collect();
        Ok(CalibrationBins { bins })
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Count-weighted mean gap between accuracy and confidence.
    pub fn ece(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lower", "upper", "count", "mean_confidence", "accuracy"])?;
        for b in &self.bins {
            w.write_record([
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                b.mean_confidence.to_string(),
                b.accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn expected_calibration_error(
    probabilities: ArrayView2<'_, f64>,
    predictions: &[usize],
    labels: &[usize],
    bins: usize,
) -> Result<f64> {
    Ok(CalibrationBins::compute(probabilities, predictions, labels, bins)?.ece())
}

/// Wall-clock measurements; excluded from determinism comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_time_s: f64,
    pub test_time_per_sample_ms: f64,
}

/// Seconds per row for scoring `rows`: one warm-up pass, then the median of `passes`
/// timed passes.
pub fn inference_seconds_per_row(model: &GbdtModel, rows: ArrayView2<'_, f64>, passes: usize) -> Result<f64> {
    if rows.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot time inference on zero rows".into()));
    }
    model.predict_proba(rows)?;
    let mut times = Vec::with_capacity(passes.max(1));
    for _ in 0..passes.max(1) {
        let start = Instant::now();
        std::hint::black_box(model.predict_proba(rows)?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(&mut times) / rows.nrows() as f64)
}

/// Times training once end to end and inference as the median of three passes after a
/// warm-up.
pub fn measure_times<F>(train_fn: F, test_rows: ArrayView2<'_, f64>) -> Result<(GbdtModel, Timing)>
where
    F: FnOnce() -> Result<GbdtModel>,
{
    let start = Instant::now();
    let model = train_fn()?;
    let train_time_s = start.elapsed().as_secs_f64();
    let per_row = inference_seconds_per_row(&model, test_rows, 3)?;
    Ok((
        model,
        Timing {
            train_time_s,
            test_time_per_sample_ms: per_row * 1e3,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub class_names: Vec<String>,
    pub n_samples: usize,
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub confidence_predicted_class: f64,
    pub confidence_true_class: f64,
    pub ece: f64,
    pub calibration: CalibrationBins,
    pub model_size_mb: f64,
    pub seed: u64,
    pub config_digest: String,
    pub timing: Timing,
}

impl EvalReport {
    /// Assembles a report from class probabilities on labelled rows.
    pub fn from_probabilities(
        probabilities: ArrayView2<'_, f64>,
        labels: &[usize],
        class_names: &[String],
        model_size_bytes: usize,
        timing: Timing,
        seed: u64,
        config_digest: &str,
    ) -> Result<Self> {
        let predictions = crate::gbdt::argmax_rows(&probabilities.to_owned());
        let m = classification_metrics(labels, &predictions, class_names.len())?;
        let (confidence_predicted_class, confidence_true_class) =
            confidence_metrics(probabilities, &predictions, labels)?;
        let calibration = CalibrationBins::compute(probabilities, &predictions, labels, ECE_BINS)?;
        Ok(EvalReport {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            class_names: class_names.to_vec(),
            n_samples: labels.len(),
            accuracy: m.accuracy,
            precision_weighted: m.precision_weighted,
            recall_weighted: m.recall_weighted,
            f1_weighted: m.f1_weighted,
            per_class: m.per_class,
            confusion: m.confusion,
            confidence_predicted_class,
            confidence_true_class,
            ece: calibration.ece(),
            calibration,
            model_size_mb: model_size_bytes as f64 / (1024.0 * 1024.0),
            seed,
            config_digest: config_digest.to_string(),
            timing,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let report: EvalReport = serde_json::from_slice(bytes)?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported report format {:?} version {}",
                report.format, report.version
            )));
        }
        Ok(report)
    }

    /// One-row table with the nine metric columns, percentages where the metric is a rate.
    pub fn to_markdown(&self, method: &str) -> String {
        let pct = |v: f64| format!("{:.3}", 100.0 * v);
        let mut s = String::new();
        s.push_str(
            "| Method | Accuracy (%) | Precision (%) | Recall (%) | F1 (%) | Training Time (s) \
             | Avg Test Time Per Sample (ms) | Model Size (MB) | Avg Confidence (%) | ECE (%) |\n",
        );
        s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        s.push_str(&format!(
            "| {method} | {} | {} | {} | {} | {:.3} | {:.5} | {:.3} | {} | {} |\n",
            pct(self.accuracy),
            pct(self.precision_weighted),
            pct(self.recall_weighted),
            pct(self.f1_weighted),
            self.timing.train_time_s,
            self.timing.test_time_per_sample_ms,
            self.model_size_mb,
            pct(self.confidence_predicted_class),
            pct(self.ece),
        ));
        s.push_str(&format!(
            "\nAvg Confidence is the mean predicted-class probability; the mean true-class \
             probability is {}%.\n",
            pct(self.confidence_true_class)
        ));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub markdown: PathBuf,
    pub calibration: PathBuf,
}

/// Writes `report.json`, `report.md` and `calibration.csv` into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>, method: &str) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        json: dir.join("report.json"),
        markdown: dir.join("report.md"),
        calibration: dir.join("calibration.csv"),
    };
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(&files.json, json).map_err(|e| Error::io(&files.json, e))?;
    let mut md = std::fs::File::create(&files.markdown).map_err(|e| Error::io(&files.markdown, e))?;
    md.write_all(report.to_markdown(method).as_bytes())
        .map_err(|e| Error::io(&files.markdown, e))?;
    report.calibration.write_csv(&files.calibration)?;
    Ok(files)
}

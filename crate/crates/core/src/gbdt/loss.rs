use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

/// Row-wise softmax with max subtraction.
pub fn softmax(scores: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = scores.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    p
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// First and second derivatives of the multiclass log-loss with respect to the raw
/// class scores: `g = p - onehot(y)`, `h = p (1 - p)`.
pub fn softmax_gradients(labels: &[usize], scores: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let p = softmax(scores);
    let mut g = p.clone();
    for (mut row, &y) in g.axis_iter_mut(Axis(0)).zip(labels) {
        row[y] -= 1.0;
    }
    let h = p.mapv(|v| v * (1.0 - v));
    (g, h)
}

/// Mean negative log-likelihood of the true class.
pub fn log_loss(labels: &[usize], scores: ArrayView2<'_, f64>) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = scores
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    total / n as f64
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Minimizer of `G w + (H + λ) w² / 2`. Returns 0 (and logs) when `H + λ` is zero.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 0.0 {
        log::warn!("leaf with zero hessian and no regularization; weight set to 0");
        return 0.0;
    }
    -g / denom
}

/// Structure-score gain of splitting a node into the given children.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let term = |g: f64, h: f64| if h + lambda > 0.0 { g * g / (h + lambda) } else { 0.0 };
    0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr)) - gamma
}

/// Adds `values` into one class column of `scores`.
pub(crate) fn add_to_column(scores: &mut Array2<f64>, class: usize, values: &[f64]) {
    Zip::from(scores.column_mut(class))
        .and(ArrayView1::from(values))
        .for_each(|s, &v| *s += v);
}

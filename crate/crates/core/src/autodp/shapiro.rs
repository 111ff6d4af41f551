//! Shapiro–Wilk normality test, Royston's approximation (AS R94).

use rand::seq::index;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::util::stream_rng;
use crate::{Error, Result};

/// Largest sample the approximation is defined for; larger inputs are subsampled.
pub const MAX_SAMPLE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
    /// Every value was identical; `w` is reported as 1 and `p_value` as 0.
    pub degenerate: bool,
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    // coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ...
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

/// Half of the antisymmetric coefficient vector, largest first.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let std_normal = Normal::standard();
    let an = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Tests `values` for normality.
///
/// Samples above [`MAX_SAMPLE`] are reduced to a uniform subsample drawn from `seed`.
pub fn shapiro_wilk(values: &[f64], seed: u64) -> Result<ShapiroWilk> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "Shapiro-Wilk needs at least 3 values, got {}",
            values.len()
        )));
    }
    let mut x: Vec<f64> = if values.len() > MAX_SAMPLE {
        let mut rng = stream_rng(seed, 0);
        index::sample(&mut rng, values.len(), MAX_SAMPLE)
            .into_iter()
            .map(|i| values[i])
            .collect()
    } else {
        values.to_vec()
    };
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let range = x[n - 1] - x[0];
    if range <= 0.0 || !range.is_finite() {
        return Ok(ShapiroWilk {
            w: 1.0,
            p_value: 0.0,
            degenerate: true,
        });
    }

    let a = coefficients(n);
    // Scale by the range for numerical safety; W is scale invariant.
    let scaled: Vec<f64> = x.iter().map(|v| (v - x[0]) / range).collect();
    let mean = scaled.iter().sum::<f64>() / n as f64;
    let ssq: f64 = scaled.iter().map(|v| (v - mean) * (v - mean)).sum();
    let numerator: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (scaled[n - 1 - i] - scaled[i]))
        .sum();
    let w = (numerator * numerator / ssq).min(1.0);

    Ok(ShapiroWilk {
        w,
        p_value: p_value(w, n),
        degenerate: false,
    })
}

fn p_value(w: f64, n: usize) -> f64 {
    if n == 3 {
        const SIX_OVER_PI: f64 = 1.909_859_317_102_74;
        // The algorithm's published literal, kept for parity with reference outputs.
        #[allow(clippy::approx_constant)]
        const PI_OVER_THREE: f64 = 1.047_197_551_196_60;
        return (SIX_OVER_PI * (w.sqrt().asin() - PI_OVER_THREE)).clamp(0.0, 1.0);
    }
    let an = n as f64;
    let w1 = 1.0 - w;
    if w1 <= 0.0 {
        return 1.0;
    }
    let mut y = w1.ln();
    let (mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return 1e-99;
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let ln_n = an.ln();
        (poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    let z = (y - mean) / sd;
    let std_normal = Normal::standard();
    // Upper tail; sf keeps precision for large z.
    let p = std_normal.sf(z);
    debug_assert!(std_normal.pdf(z).is_finite());
    p.clamp(0.0, 1.0)
}

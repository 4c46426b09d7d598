//! Small log-space numerics shared across modules.

use statrs::function::factorial::ln_factorial as statrs_ln_factorial;
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// `log(n!)`.
pub fn ln_factorial(n: usize) -> f64 {
    statrs_ln_factorial(n as u64)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs_ln_gamma(x)
}

/// Log of the multivariate gamma function `Γ_d(a)`.
pub fn ln_multigamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    let mut acc = df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 0..d {
        acc += ln_gamma(a - j as f64 / 2.0);
    }
    acc
}

/// `log Σ exp(v)`; returns `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into probabilities by max subtraction.
///
/// Returns the probabilities and the log normalizer. When every weight is
/// `-inf` the result is uniform and the normalizer is `-inf`.
pub fn normalize_log_weights(log_w: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        let k = log_w.len().max(1);
        return (vec![1.0 / k as f64; log_w.len()], lse);
    }
    let mut probs: Vec<f64> = log_w.iter().map(|v| (v - lse).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    (probs, lse)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

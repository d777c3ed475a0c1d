//! Paired comparisons over seeds.

use ppenkf_core::{Purpose, RngSpec};
use rand::Rng;

use crate::error::{AppError, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (sample std / sqrt(n)).
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Bootstrap distribution summary of the mean of paired differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedBootstrap {
    pub mean: f64,
    /// Standard deviation of the resampled means.
    pub standard_error: f64,
    pub lower_95: f64,
    pub upper_95: f64,
    /// 95th percentile: the one-sided upper bound.
    pub upper_one_sided_95: f64,
}

/// Resamples the differences `a_j − b_j` with replacement.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<PairedBootstrap> {
    if a.len() != b.len() || a.is_empty() || resamples == 0 {
        return Err(AppError::Validation(format!(
            "paired bootstrap needs equal nonempty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diff.iter().any(|d| !d.is_finite()) {
        return Err(AppError::Validation("paired bootstrap over non-finite values".into()));
    }
    let mut rng = RngSpec::new(seed, 0, Purpose::Custom(0xb007)).rng();
    let n = diff.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diff[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let quantile = |q: f64| means[((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1];
    let m = mean(&means);
    let sd = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (resamples.max(2) - 1) as f64).sqrt();
    Ok(PairedBootstrap {
        mean: mean(&diff),
        standard_error: sd,
        lower_95: quantile(0.025),
        upper_95: quantile(0.975),
        upper_one_sided_95: quantile(0.95),
    })
}

//! Evaluation metrics for twin experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// Root-mean-square difference of two fields.
pub fn compute_rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("rmse field", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Err(Error::validation("rmse of empty fields"));
    }
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(ss / truth.len() as f64))
}

/// Square root of the domain mean of the per-cell sample variances
/// (divisor `n_e − 1`).
pub fn compute_overall_std<F: AsRef<[f64]>>(members: &[F]) -> Result<f64> {
    let var = cell_variances(members)?;
    Ok(libm::sqrt(var.iter().sum::<f64>() / var.len() as f64))
}

pub fn cell_means<F: AsRef<[f64]>>(members: &[F]) -> Result<Vec<f64>> {
    let n = members.first().map(|m| m.as_ref().len()).unwrap_or(0);
    if members.is_empty() || n == 0 {
        return Err(Error::validation("no members to average"));
    }
    let mut mean = vec![0.0; n];
    for m in members {
        check_len("member field", n, m.as_ref().len())?;
        for (a, v) in mean.iter_mut().zip(m.as_ref()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= members.len() as f64);
    Ok(mean)
}

pub fn cell_variances<F: AsRef<[f64]>>(members: &[F]) -> Result<Vec<f64>> {
    if members.len() < 2 {
        return Err(Error::validation(format!(
            "spread needs at least 2 members, got {}",
            members.len()
        )));
    }
    let mean = cell_means(members)?;
    let mut var = vec![0.0; mean.len()];
    for m in members {
        for ((v, x), mu) in var.iter_mut().zip(m.as_ref()).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let denom = (members.len() - 1) as f64;
    var.iter_mut().for_each(|v| *v /= denom);
    Ok(var)
}

/// Pearson correlation between an observed scalar and every cell of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationField {
    pub values: Vec<f64>,
    /// Cells whose ensemble variance was zero; their value is set to 0.
    pub degenerate_cells: Vec<usize>,
    /// The observed variable itself had zero variance (all values are 0).
    pub degenerate_observation: bool,
}

pub fn compute_correlation_field<F: AsRef<[f64]>>(observed: &[f64], members: &[F]) -> Result<CorrelationField> {
    check_len("correlation members", observed.len(), members.len())?;
    let n_e = observed.len();
    if n_e < 2 {
        return Err(Error::validation("correlation needs at least 2 members"));
    }
    let field_mean = cell_means(members)?;
    let n = field_mean.len();
    let obs_mean = observed.iter().sum::<f64>() / n_e as f64;
    let obs_dev: Vec<f64> = observed.iter().map(|v| v - obs_mean).collect();
    let obs_ss: f64 = obs_dev.iter().map(|d| d * d).sum();
    let mut cov = vec![0.0; n];
    let mut ss = vec![0.0; n];
    for (m, od) in members.iter().zip(&obs_dev) {
        for (((c, s), x), mu) in cov.iter_mut().zip(ss.iter_mut()).zip(m.as_ref()).zip(&field_mean) {
            let d = x - mu;
            *c += d * od;
            *s += d * d;
        }
    }
    let degenerate_observation = !(obs_ss > 0.0);
    let mut degenerate_cells = Vec::new();
    let values = (0..n)
        .map(|c| {
            if !(ss[c] > 0.0) {
                degenerate_cells.push(c);
                0.0
            } else if degenerate_observation {
                0.0
            } else {
                (cov[c] / libm::sqrt(ss[c] * obs_ss)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok(CorrelationField {
        values,
        degenerate_cells,
        degenerate_observation,
    })
}

pub fn correlation_rmse(field: &[f64], reference: &[f64]) -> Result<f64> {
    compute_rmse(field, reference)
}

/// Average ranks of methods over evaluation cells (lower score is better).
///
/// `scores[m][c]` is method `m`'s score in cell `c`. Tied methods share the
/// mean of their ranks. Every method needs a score for every cell.
pub fn rank_methods(names: &[&str], scores: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    check_len("ranked methods", names.len(), scores.len())?;
    if names.is_empty() {
        return Err(Error::validation("no methods to rank"));
    }
    let n_cells = scores[0].len();
    let mut missing: Vec<String> = Vec::new();
    for (name, s) in names.iter().zip(scores) {
        if s.len() != n_cells {
            return Err(Error::validation(format!(
                "method {name} has {} cells, expected {n_cells}",
                s.len()
            )));
        }
        for (c, v) in s.iter().enumerate() {
            match v {
                Some(x) if x.is_finite() => {}
                _ => missing.push(format!("{name}[{c}]")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!("missing scores: {}", missing.join(", "))));
    }
    if n_cells == 0 {
        return Err(Error::validation("no cells to rank over"));
    }
    let n = names.len();
    let mut total = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    #[allow(clippy::needless_range_loop)]
    for c in 0..n_cells {
        let value = |m: usize| scores[m][c].expect("checked above");
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let mut k = 0;
        while k < n {
            let mut end = k;
            while end + 1 < n && value(order[end + 1]) == value(order[k]) {
                end += 1;
            }
            let shared = (k + end) as f64 / 2.0 + 1.0;
            for &m in &order[k..=end] {
                total[m] += shared;
            }
            k = end + 1;
        }
    }
    Ok(total.into_iter().map(|t| t / n_cells as f64).collect())
}

//! Kalman analysis steps.
//!
//! All ensemble variants share one gain engine: anomalies of the observed
//! entries `Y = H A`, the innovation matrix `S = Y Yᵀ / (n_e − 1) + R`, and
//! cross-covariances `C = A_rows Yᵀ / (n_e − 1)` for the rows being updated.
//! Member `i` moves by `C S⁻¹ (d_i − H x_i)`. The full state covariance is
//! never formed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::geostat::{build_interpolation_operator, gaspari_cohn, InterpolationOperator, NormalScore};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::fill_standard_normal;
use crate::state::{Ensemble, StateLayout, StateVector};

/// Condition estimate of the innovation matrix above which it is regularized.
pub const INNOVATION_CONDITION_LIMIT: f64 = 1e12;
/// Relative diagonal jitter for an ill-conditioned innovation matrix.
pub const INNOVATION_JITTER: f64 = 1e-10;

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl KalmanBelief {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        check_len("covariance rows", mean.len(), covariance.rows())?;
        check_len("covariance cols", mean.len(), covariance.cols())?;
        Ok(Self { mean, covariance })
    }
}

/// Measurements of one assimilation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    values: Vec<f64>,
    noise_variances: Vec<f64>,
    indices: Vec<usize>,
    /// `n_m × n_e` perturbed copies `d_i = d + ε_i`, one column per member.
    perturbed: Option<Matrix>,
}

impl ObservationBatch {
    /// `indices[m]` is the state entry the `m`-th measurement reads.
    pub fn new(values: Vec<f64>, noise_variances: Vec<f64>, indices: Vec<usize>) -> Result<Self> {
        check_len("noise variances", values.len(), noise_variances.len())?;
        check_len("observation indices", values.len(), indices.len())?;
        if values.is_empty() {
            return Err(Error::validation("observation batch is empty"));
        }
        if noise_variances.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::validation("noise variances must be positive and finite"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observations"));
        }
        Ok(Self {
            values,
            noise_variances,
            indices,
            perturbed: None,
        })
    }

    /// Draws `ε_i ~ N(0, R)` for `n_e` members.
    pub fn perturb<R: rand::Rng>(mut self, n_e: usize, rng: &mut R) -> Self {
        let n_m = self.n_m();
        let mut eps = vec![0.0; n_m * n_e];
        fill_standard_normal(rng, &mut eps);
        let mut d = Matrix::zeros(n_m, n_e);
        for m in 0..n_m {
            let sd = libm::sqrt(self.noise_variances[m]);
            for i in 0..n_e {
                d[(m, i)] = self.values[m] + sd * eps[m * n_e + i];
            }
        }
        self.perturbed = Some(d);
        self
    }

    pub fn with_perturbed(mut self, perturbed: Matrix) -> Result<Self> {
        check_len("perturbed observation rows", self.n_m(), perturbed.rows())?;
        self.perturbed = Some(perturbed);
        Ok(self)
    }

    pub fn n_m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn perturbed(&self) -> Option<&Matrix> {
        self.perturbed.as_ref()
    }

    fn perturbed_for(&self, n_e: usize) -> Result<&Matrix> {
        let d = self
            .perturbed
            .as_ref()
            .ok_or_else(|| Error::validation("ensemble analysis needs perturbed observations"))?;
        check_len("perturbed observation columns", n_e, d.cols())?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Enkf,
    Damped,
    Local,
    Hybrid,
    Iterative,
    Dual,
    NormalScore,
    PpEnkf,
    Interpolated,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Enkf,
        Variant::Damped,
        Variant::Local,
        Variant::Hybrid,
        Variant::Iterative,
        Variant::Dual,
        Variant::NormalScore,
        Variant::PpEnkf,
        Variant::Interpolated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Enkf => "enkf",
            Variant::Damped => "damped",
            Variant::Local => "local",
            Variant::Hybrid => "hybrid",
            Variant::Iterative => "iterative",
            Variant::Dual => "dual",
            Variant::NormalScore => "normal_score",
            Variant::PpEnkf => "pp_enkf",
            Variant::Interpolated => "interpolated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Whether the variant needs the kriging prior blocks.
    pub fn uses_pilot_points(self) -> bool {
        matches!(self, Variant::PpEnkf | Variant::Interpolated)
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FilterConfig {
    pub variant: Variant,
    pub damping: f64,
    /// Gaspari–Cohn length scale in m (half the cutoff radius).
    pub localization_length_scale: f64,
    pub hybrid_alpha: f64,
    /// Diagonal background variance of the parameters for the hybrid variant.
    pub hybrid_background_variance: f64,
}

impl FilterConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::validation(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.localization_length_scale > 0.0) {
            return Err(Error::validation(format!(
                "localization length scale must be positive, got {}",
                self.localization_length_scale
            )));
        }
        if !(self.hybrid_alpha > 0.0 && self.hybrid_alpha <= 1.0) {
            return Err(Error::validation(format!(
                "hybrid mixing constant must lie in (0, 1], got {}",
                self.hybrid_alpha
            )));
        }
        if !(self.hybrid_background_variance > 0.0 && self.hybrid_background_variance.is_finite()) {
            return Err(Error::validation("hybrid background variance must be positive"));
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Enkf,
            damping: 0.1,
            localization_length_scale: 150.0,
            hybrid_alpha: 0.5,
            hybrid_background_variance: 0.25,
        }
    }
}

/// Factorizes the innovation matrix, adding `1e-10 · trace / n_m` to the
/// diagonal once if it is singular or its condition estimate exceeds `1e12`.
pub fn factor_innovation(s: &Matrix) -> Result<Cholesky> {
    if let Ok(c) = Cholesky::new(s, "innovation matrix") {
        if c.condition_estimate() <= INNOVATION_CONDITION_LIMIT {
            return Ok(c);
        }
    }
    let mut shifted = s.clone();
    let n = s.rows().max(1);
    let shift = INNOVATION_JITTER * s.trace() / n as f64;
    shifted.add_diagonal(&vec![shift; s.rows()]);
    Cholesky::new(&shifted, "innovation matrix")
}

/// Modifications of the ensemble covariance used to build the gain.
#[derive(Debug, Clone, Copy)]
enum Shape<'a> {
    Plain,
    Tapered { length_scale: f64 },
    Hybrid { alpha: f64, background: &'a [f64] },
}

/// Increments (`rows × n_e`) of the selected rows for every member.
fn ensemble_increments(ens: &Ensemble, obs: &ObservationBatch, rows: &[usize], shape: Shape<'_>) -> Result<Matrix> {
    let layout = ens.layout();
    let n_e = ens.n_e();
    let n_m = obs.n_m();
    let d = obs.perturbed_for(n_e)?;
    for &i in obs.indices() {
        if i >= layout.n_s() {
            return Err(Error::validation(format!("observation index {i} outside the state")));
        }
    }
    let scale = 1.0 / (n_e - 1) as f64;
    let y = ens.anomalies(obs.indices());
    let a = ens.anomalies(rows);
    let mut hph = y.mul_transpose(&y);
    hph.scale(scale);
    let mut c = a.mul_transpose(&y);
    c.scale(scale);
    match shape {
        Shape::Plain => {}
        Shape::Tapered { length_scale } => {
            let grid = layout.grid();
            let obs_cells: Vec<usize> = obs.indices().iter().map(|&i| layout.cell_of(i)).collect();
            for (r, &row) in rows.iter().enumerate() {
                let cell = layout.cell_of(row);
                for (m, &oc) in obs_cells.iter().enumerate() {
                    c[(r, m)] *= gaspari_cohn(grid.distance(cell, oc) / length_scale);
                }
            }
        }
        Shape::Hybrid { alpha, background } => {
            check_len("hybrid background", layout.n_s(), background.len())?;
            hph.scale(alpha);
            c.scale(alpha);
            for (m, &im) in obs.indices().iter().enumerate() {
                hph[(m, m)] += (1.0 - alpha) * background[im];
            }
            for (r, &row) in rows.iter().enumerate() {
                for (m, &im) in obs.indices().iter().enumerate() {
                    if im == row {
                        c[(r, m)] += (1.0 - alpha) * background[row];
                    }
                }
            }
        }
    }
    let mut s = hph;
    s.add_diagonal(obs.noise_variances());
    s.symmetrize();
    let chol = factor_innovation(&s)?;
    let mut innov = Matrix::zeros(n_m, n_e);
    for (k, member) in ens.members().iter().enumerate() {
        for (m, &im) in obs.indices().iter().enumerate() {
            innov[(m, k)] = d[(m, k)] - member[im];
        }
    }
    let w = chol.solve_mat(&innov);
    Ok(c.mul(&w))
}

fn apply_increments(ens: &Ensemble, rows: &[usize], delta: &Matrix, factor: impl Fn(usize) -> f64) -> Result<Ensemble> {
    let mut members = ens.members().to_vec();
    for (k, m) in members.iter_mut().enumerate() {
        let x = m.as_mut_slice();
        for (r, &row) in rows.iter().enumerate() {
            x[row] += factor(row) * delta[(r, k)];
        }
    }
    ens.with_members(members)
}

fn all_rows(layout: &StateLayout) -> Vec<usize> {
    (0..layout.n_s()).collect()
}

/// Stochastic EnKF analysis with perturbed observations.
pub fn enkf_analysis(ens: &Ensemble, obs: &ObservationBatch) -> Result<Ensemble> {
    let rows = all_rows(ens.layout());
    let delta = ensemble_increments(ens, obs, &rows, Shape::Plain)?;
    apply_increments(ens, &rows, &delta, |_| 1.0)
}

/// EnKF whose parameter increments are scaled by `damping`.
pub fn damped_analysis(ens: &Ensemble, obs: &ObservationBatch, damping: f64) -> Result<Ensemble> {
    if !(0.0..=1.0).contains(&damping) {
        return Err(Error::validation(format!("damping must lie in [0, 1], got {damping}")));
    }
    let layout = ens.layout();
    let rows = all_rows(layout);
    let delta = ensemble_increments(ens, obs, &rows, Shape::Plain)?;
    let n_params = layout.n_params();
    apply_increments(ens, &rows, &delta, |row| if row < n_params { damping } else { 1.0 })
}

/// EnKF with the state-to-observation covariances tapered by distance.
pub fn local_analysis(ens: &Ensemble, obs: &ObservationBatch, length_scale: f64) -> Result<Ensemble> {
    if !(length_scale > 0.0) {
        return Err(Error::validation("localization length scale must be positive"));
    }
    let rows = all_rows(ens.layout());
    let delta = ensemble_increments(ens, obs, &rows, Shape::Tapered { length_scale })?;
    apply_increments(ens, &rows, &delta, |_| 1.0)
}

/// Diagonal background with `parameter_variance` on parameters and zero on
/// dynamic variables.
pub fn parameter_background(layout: &StateLayout, parameter_variance: f64) -> Vec<f64> {
    let mut b = vec![0.0; layout.n_s()];
    b[layout.param_range()].iter_mut().for_each(|v| *v = parameter_variance);
    b
}

/// EnKF with the covariance `α P_e + (1 − α) B` for a diagonal `B`.
pub fn hybrid_analysis(ens: &Ensemble, obs: &ObservationBatch, alpha: f64, background: &[f64]) -> Result<Ensemble> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation(format!(
            "mixing constant must lie in [0, 1], got {alpha}"
        )));
    }
    let rows = all_rows(ens.layout());
    let delta = ensemble_increments(ens, obs, &rows, Shape::Hybrid { alpha, background })?;
    apply_increments(ens, &rows, &delta, |_| 1.0)
}

fn require_restricted_observations(layout: &StateLayout, obs: &ObservationBatch) -> Result<()> {
    for &i in obs.indices() {
        if i >= layout.n_s() || !layout.is_pilot_or_dynamic(i) {
            return Err(Error::validation(format!(
                "observation index {i} reads a non-pilot parameter"
            )));
        }
    }
    for &i in obs.indices() {
        if i >= layout.n_params() {
            layout.require_pilot_cells(&[layout.cell_of(i)])?;
        }
    }
    Ok(())
}

/// Kriging operator built from the ensemble pilot covariance and the fixed
/// prior cross-covariance.
pub fn ensemble_interpolation_operator(ens: &Ensemble, prior_rp: &Matrix) -> Result<InterpolationOperator> {
    let layout = ens.layout();
    let pilots: Vec<usize> = layout.pilot_range().collect();
    let a = ens.anomalies(&pilots);
    let mut pp = a.mul_transpose(&a);
    pp.scale(1.0 / (ens.n_e() - 1) as f64);
    pp.symmetrize();
    build_interpolation_operator(prior_rp, &pp, layout)
}

/// Restricted update of pilot and dynamic rows; returns the rows and the
/// increments.
fn restricted_increments(ens: &Ensemble, obs: &ObservationBatch) -> Result<(Vec<usize>, Matrix)> {
    let layout = ens.layout();
    require_restricted_observations(layout, obs)?;
    let rows = layout.pilot_and_dynamic_indices();
    let delta = ensemble_increments(ens, obs, &rows, Shape::Plain)?;
    Ok((rows, delta))
}

/// Pilot point EnKF: restricted update of pilot parameters and dynamic
/// variables, followed by kriging of each member's pilot increment onto the
/// non-pilot parameters with `P_rp⁰ · P_pp,e⁻¹`.
pub fn ppenkf_analysis(ens: &Ensemble, obs: &ObservationBatch, prior_rp: &Matrix) -> Result<Ensemble> {
    let layout = ens.layout();
    let (rows, delta) = restricted_increments(ens, obs)?;
    let op = ensemble_interpolation_operator(ens, prior_rp)?;
    let mut out = apply_increments(ens, &rows, &delta, |_| 1.0)?.into_members();
    let (n_p, n_r) = (layout.n_p(), layout.n_r());
    let mut pilot_delta = vec![0.0; n_p];
    for (k, m) in out.iter_mut().enumerate() {
        for (p, v) in pilot_delta.iter_mut().enumerate() {
            *v = delta[(p, k)];
        }
        let dr = op.interpolate(&pilot_delta);
        let x = m.as_mut_slice();
        for (v, d) in x[n_p..n_p + n_r].iter_mut().zip(&dr) {
            *v += d;
        }
    }
    ens.with_members(out)
}

/// Simple kriging of the non-pilot parameters from pilot values with the
/// prior model: `x_r = μ_r + W⁰ (x_p − μ_p)`.
#[derive(Debug, Clone)]
pub struct PriorKriging {
    mean: f64,
    operator: InterpolationOperator,
}

impl PriorKriging {
    pub fn new(prior_mean: f64, prior_rp: &Matrix, prior_pp: &Matrix, layout: &StateLayout) -> Result<Self> {
        Ok(Self {
            mean: prior_mean,
            operator: build_interpolation_operator(prior_rp, prior_pp, layout)?,
        })
    }

    pub fn operator(&self) -> &InterpolationOperator {
        &self.operator
    }

    /// Overwrites the non-pilot parameters of `x`.
    pub fn reconstruct(&self, x: &mut StateVector, layout: &StateLayout) {
        let (n_p, n_r) = (layout.n_p(), layout.n_r());
        let anomalies: Vec<f64> = x.as_slice()[..n_p].iter().map(|v| v - self.mean).collect();
        let r = self.operator.interpolate(&anomalies);
        for (v, d) in x.as_mut_slice()[n_p..n_p + n_r].iter_mut().zip(r) {
            *v = self.mean + d;
        }
    }

    pub fn reconstruct_ensemble(&self, ens: &Ensemble) -> Result<Ensemble> {
        let mut members = ens.members().to_vec();
        for m in &mut members {
            self.reconstruct(m, ens.layout());
        }
        ens.with_members(members)
    }
}

/// Restricted update as in the pilot point EnKF, then the non-pilot
/// parameters are rebuilt entirely by prior kriging of the pilot values.
pub fn interpolated_analysis(ens: &Ensemble, obs: &ObservationBatch, kriging: &PriorKriging) -> Result<Ensemble> {
    let (rows, delta) = restricted_increments(ens, obs)?;
    let updated = apply_increments(ens, &rows, &delta, |_| 1.0)?;
    kriging.reconstruct_ensemble(&updated)
}

/// EnKF in normal-score space of the parameters. Each parameter entry gets
/// its own anamorphosis fitted to the forecast members.
pub fn normal_score_analysis(ens: &Ensemble, obs: &ObservationBatch) -> Result<Ensemble> {
    let layout = ens.layout();
    let n_params = layout.n_params();
    let mut tables = Vec::with_capacity(n_params);
    let mut members = ens.members().to_vec();
    let mut column = vec![0.0; ens.n_e()];
    for p in 0..n_params {
        for (v, m) in column.iter_mut().zip(&members) {
            *v = m[p];
        }
        let table = NormalScore::fit(&column)?;
        for m in members.iter_mut() {
            let x = m.as_mut_slice();
            x[p] = table.forward(x[p]);
        }
        tables.push(table);
    }
    let transformed = ens.with_members(members)?;
    let updated = enkf_analysis(&transformed, obs)?;
    let mut out = updated.into_members();
    for m in out.iter_mut() {
        let x = m.as_mut_slice();
        for (p, table) in tables.iter().enumerate() {
            x[p] = table.back(x[p]);
        }
    }
    ens.with_members(out)
}

/// Moves an ensemble between two steps of the forward model.
pub trait Propagator {
    fn propagate(&self, ens: &Ensemble, from: usize, to: usize) -> Result<Ensemble>;
}

/// EnKF update, then the dynamic variables are reset to `initial` and the
/// ensemble is re-simulated from step 0 to `step` with the updated parameters.
pub fn iterative_analysis<P: Propagator + ?Sized>(
    ens: &Ensemble,
    obs: &ObservationBatch,
    initial_dynamics: &[f64],
    propagator: &P,
    step: usize,
) -> Result<Ensemble> {
    let layout = ens.layout();
    check_len("initial dynamics", layout.n_d(), initial_dynamics.len())?;
    let updated = enkf_analysis(ens, obs)?;
    let dyn_range = layout.dynamic_range();
    let mut members = updated.into_members();
    for m in &mut members {
        m.as_mut_slice()[dyn_range.clone()].copy_from_slice(initial_dynamics);
    }
    propagator.propagate(&ens.with_members(members)?, 0, step)
}

/// Two-pass update. Pass 1 updates the parameters of the forecast; the
/// previous analysis is then re-simulated over `from..to` with those
/// parameters, and pass 2 updates only its dynamic variables with the same
/// perturbed observations.
pub fn dual_analysis<P: Propagator + ?Sized>(
    forecast: &Ensemble,
    previous: &Ensemble,
    obs: &ObservationBatch,
    propagator: &P,
    from: usize,
    to: usize,
) -> Result<Ensemble> {
    let layout = forecast.layout();
    if previous.n_e() != forecast.n_e() || previous.layout() != layout {
        return Err(Error::validation(
            "dual analysis needs matching forecast and previous ensembles",
        ));
    }
    let params: Vec<usize> = layout.param_range().collect();
    let delta = ensemble_increments(forecast, obs, &params, Shape::Plain)?;
    let mut restart = previous.members().to_vec();
    for (k, m) in restart.iter_mut().enumerate() {
        let x = m.as_mut_slice();
        for &p in &params {
            x[p] = forecast.members()[k][p] + delta[(p, k)];
        }
    }
    let reforecast = propagator.propagate(&previous.with_members(restart)?, from, to)?;
    let dynamics: Vec<usize> = layout.dynamic_range().collect();
    let delta = ensemble_increments(&reforecast, obs, &dynamics, Shape::Plain)?;
    apply_increments(&reforecast, &dynamics, &delta, |_| 1.0)
}

/// Classical Kalman update of mean and covariance.
pub fn kalman_update(belief: &KalmanBelief, obs: &ObservationBatch) -> Result<KalmanBelief> {
    let n = belief.mean.len();
    let idx = obs.indices();
    if idx.iter().any(|&i| i >= n) {
        return Err(Error::validation("observation index outside the state"));
    }
    let p = &belief.covariance;
    let all: Vec<usize> = (0..n).collect();
    let pht = p.select(&all, idx);
    let mut s = p.select(idx, idx);
    s.add_diagonal(obs.noise_variances());
    s.symmetrize();
    let chol = factor_innovation(&s)?;
    let innov: Vec<f64> = idx.iter().zip(obs.values()).map(|(&i, d)| d - belief.mean[i]).collect();
    let w = chol.solve_vec(&innov);
    let dx = pht.mul_vec(&w);
    let mean = belief.mean.iter().zip(&dx).map(|(x, d)| x + d).collect();
    // P − P Hᵀ S⁻¹ H P
    let k_t = chol.solve_mat(&pht.transpose());
    let mut cov = p.clone();
    cov.add_scaled(-1.0, &pht.mul(&k_t));
    cov.symmetrize();
    KalmanBelief::new(mean, cov)
}

/// `H · P̃ · Hᵀ` where `P̃` is `P` with every row and column of a non-pilot
/// parameter set to zero.
pub fn compute_p_yppy(covariance: &Matrix, layout: &StateLayout, indices: &[usize]) -> Result<Matrix> {
    check_len("covariance rows", layout.n_s(), covariance.rows())?;
    check_len("covariance cols", layout.n_s(), covariance.cols())?;
    let n = indices.len();
    Ok(Matrix::from_fn(n, n, |a, b| {
        let (ia, ib) = (indices[a], indices[b]);
        if layout.is_pilot_or_dynamic(ia) && layout.is_pilot_or_dynamic(ib) {
            covariance[(ia, ib)]
        } else {
            0.0
        }
    }))
}

/// Ensemble version of [`compute_p_yppy`] built from anomalies.
pub fn compute_p_yppy_ensemble(ens: &Ensemble, indices: &[usize]) -> Result<Matrix> {
    let layout = ens.layout();
    if indices.iter().any(|&i| i >= layout.n_s()) {
        return Err(Error::validation("observation index outside the state"));
    }
    let mut y = ens.anomalies(indices);
    for (m, &i) in indices.iter().enumerate() {
        if !layout.is_pilot_or_dynamic(i) {
            y.row_mut(m).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut p = y.mul_transpose(&y);
    p.scale(1.0 / (ens.n_e() - 1) as f64);
    p.symmetrize();
    Ok(p)
}

/// Pilot point Kalman filter: Kalman update restricted to pilot parameters
/// and dynamic variables, then both the mean and covariance increments are
/// expanded with the kriging operator.
pub fn ppkf_update(
    belief: &KalmanBelief,
    obs: &ObservationBatch,
    layout: &StateLayout,
    prior_rp: &Matrix,
) -> Result<KalmanBelief> {
    check_len("belief", layout.n_s(), belief.mean.len())?;
    require_restricted_observations(layout, obs)?;
    let rows = layout.pilot_and_dynamic_indices();
    let mut position = vec![usize::MAX; layout.n_s()];
    for (k, &r) in rows.iter().enumerate() {
        position[r] = k;
    }
    let restricted_idx: Vec<usize> = obs.indices().iter().map(|&i| position[i]).collect();
    let p_red = belief.covariance.select(&rows, &rows);
    let mean_red: Vec<f64> = rows.iter().map(|&r| belief.mean[r]).collect();
    let restricted_obs = ObservationBatch::new(obs.values().to_vec(), obs.noise_variances().to_vec(), restricted_idx)?;
    let prior = KalmanBelief::new(mean_red.clone(), p_red.clone())?;
    let post = kalman_update(&prior, &restricted_obs)?;

    let pilots: Vec<usize> = layout.pilot_range().collect();
    let pp = belief.covariance.select(&pilots, &pilots);
    let op = build_interpolation_operator(prior_rp, &pp, layout)?.to_dense();
    let dx_red: Vec<f64> = post.mean.iter().zip(&mean_red).map(|(a, b)| a - b).collect();
    let dx = op.mul_vec(&dx_red);
    let mut dp_red = post.covariance.clone();
    dp_red.add_scaled(-1.0, &p_red);
    let dp = op.mul(&dp_red).mul_transpose(&op);
    let mean = belief.mean.iter().zip(&dx).map(|(x, d)| x + d).collect();
    let mut cov = belief.covariance.clone();
    cov.add_scaled(1.0, &dp);
    cov.symmetrize();
    KalmanBelief::new(mean, cov)
}

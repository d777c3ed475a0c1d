//! Geostatistical prior model and kriging.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::linalg::{Cholesky, Matrix};
use crate::rng::{fill_standard_normal, RngSpec};
use crate::state::StateLayout;

/// Relative diagonal jitter used when a covariance block cannot be factorized.
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// Isotropic spherical variogram without nugget, together with the mean and
/// standard deviation of the log10-permeability field it describes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Variogram {
    range: f64,
    mean: f64,
    std: f64,
}

impl Variogram {
    pub fn new(mean: f64, std: f64, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::validation(format!(
                "variogram range must be positive, got {range}"
            )));
        }
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::validation(format!("field std must be non-negative, got {std}")));
        }
        if !mean.is_finite() {
            return Err(Error::validation("field mean must be finite"));
        }
        Ok(Self { range, mean, std })
    }

    /// Uses `range = 2 × correlation_length`.
    pub fn from_correlation_length(mean: f64, std: f64, correlation_length: f64) -> Result<Self> {
        Self::new(mean, std, 2.0 * correlation_length)
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn sill(&self) -> f64 {
        self.std * self.std
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn covariance(&self, h: f64) -> Result<f64> {
        if !(h >= 0.0) {
            return Err(Error::validation(format!("lag distance must be non-negative, got {h}")));
        }
        Ok(self.covariance_at(h))
    }

    #[inline]
    pub(crate) fn covariance_at(&self, h: f64) -> f64 {
        if h >= self.range {
            return 0.0;
        }
        let r = h / self.range;
        self.sill() * (1.0 - 1.5 * r + 0.5 * r * r * r)
    }

    /// Semivariogram `γ(h) = sill − C(h)`.
    pub fn semivariance(&self, h: f64) -> f64 {
        self.sill() - self.covariance_at(h)
    }
}

/// Prior covariance between the parameters of two sets of cells.
pub fn covariance_between(grid: &Grid, vg: &Variogram, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| {
        vg.covariance_at(grid.distance(rows[i], cols[j]))
    })
}

/// Draws stationary Gaussian fields from the exact covariance square root.
#[derive(Debug, Clone)]
pub struct FieldGenerator {
    n_cells: usize,
    mean: f64,
    factor: Option<Cholesky>,
}

impl FieldGenerator {
    pub fn new(grid: &Grid, vg: &Variogram) -> Result<Self> {
        let n = grid.n_cells();
        if vg.std() == 0.0 {
            return Ok(Self {
                n_cells: n,
                mean: vg.mean(),
                factor: None,
            });
        }
        let cells: Vec<usize> = (0..n).collect();
        let cov = covariance_between(grid, vg, &cells, &cells);
        let factor = Cholesky::with_jitter_retry(&cov, COVARIANCE_JITTER, "field covariance").map_err(|e| match e {
            Error::Factorization { pivot, value, .. } => Error::validation(format!(
                "field covariance of a {}x{} grid with range {} m is not positive definite \
                     (pivot {pivot}, value {value:e})",
                grid.nx(),
                grid.ny(),
                vg.range()
            )),
            other => other,
        })?;
        Ok(Self {
            n_cells: n,
            mean: vg.mean(),
            factor: Some(factor),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.factor {
            None => vec![self.mean; self.n_cells],
            Some(l) => {
                let mut z = vec![0.0; self.n_cells];
                fill_standard_normal(rng, &mut z);
                let mut field = l.lower_mul_vec(&z);
                field.iter_mut().for_each(|v| *v += self.mean);
                field
            }
        }
    }
}

pub fn generate_gaussian_field(grid: &Grid, vg: &Variogram, rng: RngSpec) -> Result<Vec<f64>> {
    Ok(FieldGenerator::new(grid, vg)?.sample(&mut rng.rng()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CovarianceSource {
    Analytic,
    Empirical { n_fields: usize },
}

/// Fixed prior covariance blocks used for kriging: non-pilot × pilot and
/// pilot × pilot.
#[derive(Debug, Clone)]
pub struct PriorCrossCovariance {
    rp: Matrix,
    pp: Matrix,
    source: CovarianceSource,
}

impl PriorCrossCovariance {
    pub fn rp(&self) -> &Matrix {
        &self.rp
    }

    pub fn pp(&self) -> &Matrix {
        &self.pp
    }

    pub fn source(&self) -> CovarianceSource {
        self.source
    }
}

/// Builds the fixed prior covariance blocks. The empirical source draws its
/// fields from `rng`, which is ignored by the analytic source.
pub fn build_prior_cross_covariance(
    layout: &StateLayout,
    vg: &Variogram,
    source: CovarianceSource,
    rng: RngSpec,
) -> Result<PriorCrossCovariance> {
    let grid = layout.grid();
    let pilots = layout.pilot_cells();
    let others = layout.nonpilot_cells();
    match source {
        CovarianceSource::Analytic => Ok(PriorCrossCovariance {
            rp: covariance_between(grid, vg, others, pilots),
            pp: covariance_between(grid, vg, pilots, pilots),
            source,
        }),
        CovarianceSource::Empirical { n_fields } => {
            if n_fields < 2 {
                return Err(Error::validation(format!(
                    "empirical prior covariance needs at least 2 fields, got {n_fields}"
                )));
            }
            let generator = FieldGenerator::new(grid, vg)?;
            let mut stream = rng.rng();
            let (n_p, n_r) = (pilots.len(), others.len());
            // Shifted sums: deviations from the known mean keep the
            // cross-product accumulation well conditioned.
            let mut sum_p = vec![0.0; n_p];
            let mut sum_r = vec![0.0; n_r];
            let mut rp = Matrix::zeros(n_r, n_p);
            let mut pp = Matrix::zeros(n_p, n_p);
            let mut xp = vec![0.0; n_p];
            for _ in 0..n_fields {
                let field = generator.sample(&mut stream);
                for (k, &c) in pilots.iter().enumerate() {
                    xp[k] = field[c] - vg.mean();
                    sum_p[k] += xp[k];
                }
                for a in 0..n_p {
                    let row = pp.row_mut(a);
                    for b in 0..n_p {
                        row[b] += xp[a] * xp[b];
                    }
                }
                for (k, &c) in others.iter().enumerate() {
                    let xr = field[c] - vg.mean();
                    sum_r[k] += xr;
                    for (v, p) in rp.row_mut(k).iter_mut().zip(&xp) {
                        *v += xr * p;
                    }
                }
            }
            let n = n_fields as f64;
            let denom = n - 1.0;
            for a in 0..n_p {
                for b in 0..n_p {
                    pp[(a, b)] = (pp[(a, b)] - sum_p[a] * sum_p[b] / n) / denom;
                }
            }
            for k in 0..n_r {
                for b in 0..n_p {
                    rp[(k, b)] = (rp[(k, b)] - sum_r[k] * sum_p[b] / n) / denom;
                }
            }
            pp.symmetrize();
            Ok(PriorCrossCovariance { rp, pp, source })
        }
    }
}

/// Kriging operator that maps pilot parameter values (or updates) to the
/// non-pilot parameters, `weights = P_rp · P_pp⁻¹`.
#[derive(Debug, Clone)]
pub struct InterpolationOperator {
    weights: Matrix,
    n_d: usize,
    jitter: f64,
}

pub fn build_interpolation_operator(rp: &Matrix, pp: &Matrix, layout: &StateLayout) -> Result<InterpolationOperator> {
    let (n_p, n_r) = (layout.n_p(), layout.n_r());
    check_len("pilot covariance rows", n_p, pp.rows())?;
    check_len("pilot covariance cols", n_p, pp.cols())?;
    check_len("cross covariance rows", n_r, rp.rows())?;
    check_len("cross covariance cols", n_p, rp.cols())?;
    if n_r == 0 || n_p == 0 {
        return Ok(InterpolationOperator {
            weights: Matrix::zeros(n_r, n_p),
            n_d: layout.n_d(),
            jitter: 0.0,
        });
    }
    let chol = Cholesky::with_jitter_retry(pp, COVARIANCE_JITTER, "pilot covariance")?;
    // P_pp symmetric, so W = (P_pp⁻¹ P_rpᵀ)ᵀ.
    let weights = chol.solve_mat(&rp.transpose()).transpose();
    Ok(InterpolationOperator {
        weights,
        n_d: layout.n_d(),
        jitter: chol.jitter(),
    })
}

impl InterpolationOperator {
    /// `n_r × n_p` kriging weights.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Diagonal jitter that was needed to factorize the pilot covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_p(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_r(&self) -> usize {
        self.weights.rows()
    }

    /// Non-pilot values implied by the pilot values.
    pub fn interpolate(&self, pilot: &[f64]) -> Vec<f64> {
        self.weights.mul_vec(pilot)
    }

    /// Expands a restricted vector `(pilot, dynamic)` of length `n_p + n_d`
    /// into a full state-ordered vector.
    pub fn apply(&self, restricted: &[f64]) -> Result<Vec<f64>> {
        let n_p = self.n_p();
        check_len("restricted vector", n_p + self.n_d, restricted.len())?;
        let mut out = Vec::with_capacity(n_p + self.n_r() + self.n_d);
        out.extend_from_slice(&restricted[..n_p]);
        out.extend(self.interpolate(&restricted[..n_p]));
        out.extend_from_slice(&restricted[n_p..]);
        Ok(out)
    }

    /// The full `n_s × (n_p + n_d)` block operator.
    pub fn to_dense(&self) -> Matrix {
        let (n_p, n_r, n_d) = (self.n_p(), self.n_r(), self.n_d);
        let mut m = Matrix::zeros(n_p + n_r + n_d, n_p + n_d);
        for i in 0..n_p {
            m[(i, i)] = 1.0;
        }
        for r in 0..n_r {
            m.row_mut(n_p + r)[..n_p].copy_from_slice(self.weights.row(r));
        }
        for d in 0..n_d {
            m[(n_p + n_r + d, n_p + d)] = 1.0;
        }
        m
    }
}

/// Gaspari–Cohn compactly supported correlation, `weight(h)` with support
/// `[0, 2c)`.
pub fn taper_weight(h: f64, length_scale: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::validation(format!(
            "taper distance must be non-negative, got {h}"
        )));
    }
    if !(length_scale > 0.0) {
        return Err(Error::validation(format!(
            "taper length scale must be positive, got {length_scale}"
        )));
    }
    Ok(gaspari_cohn(h / length_scale))
}

pub(crate) fn gaspari_cohn(r: f64) -> f64 {
    if r >= 2.0 {
        0.0
    } else if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        1.0 - 5.0 / 3.0 * r2 + 0.625 * r3 + 0.5 * r2 * r2 - 0.25 * r2 * r3
    } else {
        let r2 = r * r;
        let r3 = r2 * r;
        let w = 4.0 - 5.0 * r + 5.0 / 3.0 * r2 + 0.625 * r3 - 0.5 * r2 * r2 + r2 * r3 / 12.0 - 2.0 / (3.0 * r);
        w.max(0.0)
    }
}

/// Score range used to clamp tail extrapolation.
pub const SCORE_LIMIT: f64 = 4.0;

/// Empirical anamorphosis of one scalar: a piecewise-linear map between
/// sorted sample values and standard normal scores at the Weibull plotting
/// positions `rank / (n + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalScore {
    values: Vec<f64>,
    scores: Vec<f64>,
}

impl NormalScore {
    pub fn fit(sample: &[f64]) -> Result<Self> {
        let n = sample.len();
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normal score sample"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values = Vec::new();
        let mut scores = Vec::new();
        let mut k = 0;
        while k < n {
            let mut end = k;
            while end + 1 < n && sorted[end + 1] == sorted[k] {
                end += 1;
            }
            // tied values share the mean score of their ranks
            let s = (k..=end)
                .map(|r| inverse_normal_cdf((r as f64 + 1.0) / (n as f64 + 1.0)))
                .sum::<f64>()
                / (end - k + 1) as f64;
            values.push(sorted[k]);
            scores.push(s);
            k = end + 1;
        }
        if values.len() < 2 {
            return Err(Error::validation(
                "normal score transform needs at least two distinct values",
            ));
        }
        Ok(Self { values, scores })
    }

    pub fn forward(&self, x: f64) -> f64 {
        interpolate_clamped(&self.values, &self.scores, x).clamp(-SCORE_LIMIT, SCORE_LIMIT)
    }

    pub fn back(&self, s: f64) -> f64 {
        interpolate_clamped(&self.scores, &self.values, s.clamp(-SCORE_LIMIT, SCORE_LIMIT))
    }

    /// Values reached by back-transforming the clamped score range.
    pub fn value_bounds(&self) -> (f64, f64) {
        (self.back(-SCORE_LIMIT), self.back(SCORE_LIMIT))
    }
}

/// Piecewise-linear interpolation on increasing `xs`, extrapolating linearly
/// with the end segments.
fn interpolate_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let seg = if x <= xs[0] {
        0
    } else if x >= xs[n - 1] {
        n - 2
    } else {
        xs.partition_point(|&v| v <= x) - 1
    };
    let (x0, x1, y0, y1) = (xs[seg], xs[seg + 1], ys[seg], ys[seg + 1]);
    if x == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

pub fn normal_score_forward(values: &[f64]) -> Result<(Vec<f64>, NormalScore)> {
    let table = NormalScore::fit(values)?;
    Ok((values.iter().map(|&v| table.forward(v)).collect(), table))
}

pub fn normal_score_back(scores: &[f64], table: &NormalScore) -> Vec<f64> {
    scores.iter().map(|&s| table.back(s)).collect()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if libm::fabs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use crate::state::DynamicKind;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn spherical_model_values() {
        let vg = Variogram::new(0.0, 0.5, 50.0).unwrap();
        assert_eq!(vg.covariance(0.0).unwrap(), 0.25);
        assert_eq!(vg.covariance(50.0).unwrap(), 0.0);
        assert_eq!(vg.covariance(100.0).unwrap(), 0.0);
        assert!(close(vg.covariance(25.0).unwrap(), 0.078125, 1e-15));
        assert!(vg.covariance(-1.0).is_err());
        assert!(Variogram::new(0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn constant_field_when_std_is_zero() {
        let g = Grid::square(5, 10.0).unwrap();
        let vg = Variogram::new(-12.5, 0.0, 20.0).unwrap();
        let f = generate_gaussian_field(&g, &vg, RngSpec::new(1, 0, Purpose::Prior)).unwrap();
        assert!(f.iter().all(|&v| v == -12.5));
    }

    #[test]
    fn taper_values() {
        assert_eq!(taper_weight(0.0, 150.0).unwrap(), 1.0);
        assert_eq!(taper_weight(300.0, 150.0).unwrap(), 0.0);
        assert_eq!(taper_weight(450.0, 150.0).unwrap(), 0.0);
        assert!(close(taper_weight(150.0, 150.0).unwrap(), 5.0 / 24.0, 1e-15));
        assert!(taper_weight(1.0, 0.0).is_err());
        // continuity at the cutoff and monotone decay
        let mut last = 1.0;
        for k in 0..=400 {
            let w = gaspari_cohn(k as f64 * 0.005);
            assert!(w <= last + 1e-15 && w >= 0.0);
            last = w;
        }
        assert!(gaspari_cohn(2.0 - 1e-9) < 1e-12);
    }

    #[test]
    fn inverse_normal_table() {
        assert!(close(inverse_normal_cdf(0.5), 0.0, 1e-16));
        assert!(close(inverse_normal_cdf(0.75), 0.674489750196082, 1e-12));
        assert!(close(inverse_normal_cdf(0.975), 1.959963984540054, 1e-12));
        assert!(close(inverse_normal_cdf(1e-10), -6.361340902404056, 1e-9));
        for k in 1..100 {
            let p = k as f64 / 100.0;
            assert!(close(normal_cdf(inverse_normal_cdf(p)), p, 1e-14));
        }
    }

    #[test]
    fn three_sample_scores() {
        let (s, table) = normal_score_forward(&[3.0, 1.0, 2.0]).unwrap();
        assert!(close(s[0], 0.6744897501960817, 1e-12));
        assert!(close(s[1], -0.6744897501960817, 1e-12));
        assert!(close(s[2], 0.0, 1e-15));
        let back = normal_score_back(&s, &table);
        for (a, b) in back.iter().zip([3.0, 1.0, 2.0]) {
            assert!(close(*a, b, 1e-12));
        }
        assert!(NormalScore::fit(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn single_pilot_weight_is_covariance_ratio() {
        let g = Grid::new(3, 1, 10.0, 10.0).unwrap();
        let layout = StateLayout::new(g, &[1], &[DynamicKind::Head]).unwrap();
        let rp = Matrix::from_row_major(2, 1, vec![0.1, 0.05]).unwrap();
        let pp = Matrix::from_row_major(1, 1, vec![0.25]).unwrap();
        let op = build_interpolation_operator(&rp, &pp, &layout).unwrap();
        assert!(close(op.weights()[(0, 0)], 0.4, 1e-15));
        assert!(close(op.weights()[(1, 0)], 0.2, 1e-15));
        let full = op.apply(&[1.0, 7.0, 8.0, 9.0]).unwrap();
        assert_eq!(full.len(), layout.n_s());
        assert_eq!(&full[..1], &[1.0]);
        assert!(close(full[1], 0.4, 1e-15) && close(full[2], 0.2, 1e-15));
        assert_eq!(&full[3..], &[7.0, 8.0, 9.0]);
        let dense = op.to_dense();
        assert_eq!(dense.rows(), 6);
        assert_eq!(dense.cols(), 4);
    }

    #[test]
    fn no_nonpilot_cells_gives_identity() {
        let g = Grid::square(2, 2.0).unwrap();
        let layout = StateLayout::new(g, &[0, 1, 2, 3], &[DynamicKind::Head]).unwrap();
        let vg = Variogram::new(0.0, 0.5, 3.0).unwrap();
        let prior = build_prior_cross_covariance(
            &layout,
            &vg,
            CovarianceSource::Analytic,
            RngSpec::new(0, 0, Purpose::PriorCrossCovariance),
        )
        .unwrap();
        let op = build_interpolation_operator(prior.rp(), prior.pp(), &layout).unwrap();
        assert_eq!(op.to_dense(), Matrix::identity(8));
    }

    #[test]
    fn empirical_source_needs_two_fields() {
        let g = Grid::square(3, 3.0).unwrap();
        let layout = StateLayout::new(g, &[4], &[DynamicKind::Head]).unwrap();
        let vg = Variogram::new(0.0, 0.5, 3.0).unwrap();
        let spec = RngSpec::new(0, 0, Purpose::PriorCrossCovariance);
        assert!(build_prior_cross_covariance(&layout, &vg, CovarianceSource::Empirical { n_fields: 1 }, spec).is_err());
    }

    #[test]
    fn analytic_entries_follow_distance() {
        let g = Grid::new(4, 1, 25.0, 25.0).unwrap();
        let layout = StateLayout::new(g, &[0], &[DynamicKind::Head]).unwrap();
        let vg = Variogram::new(0.0, 0.5, 50.0).unwrap();
        let prior = build_prior_cross_covariance(
            &layout,
            &vg,
            CovarianceSource::Analytic,
            RngSpec::new(0, 0, Purpose::PriorCrossCovariance),
        )
        .unwrap();
        // non-pilot cells at 25, 50, 75 m from the pilot
        assert!(close(prior.rp()[(0, 0)], 0.078125, 1e-15));
        assert_eq!(prior.rp()[(1, 0)], 0.0);
        assert_eq!(prior.rp()[(2, 0)], 0.0);
    }
}

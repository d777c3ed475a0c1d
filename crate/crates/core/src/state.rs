//! State-vector layout, realizations and ensembles.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::linalg::Matrix;

/// Kind of a dynamic (time-varying) field carried in the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DynamicKind {
    Head,
    Concentration,
}

/// Partition of the state vector into pilot parameters, non-pilot parameters
/// and dynamic variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    grid: Grid,
    pilot_cells: Vec<usize>,
    nonpilot_cells: Vec<usize>,
    dynamic_kinds: Vec<DynamicKind>,
    /// State index of the parameter of each cell.
    param_index: Vec<usize>,
}

impl StateLayout {
    /// Builds the layout. Pilot cells keep the given order; non-pilot cells
    /// follow in ascending cell order; dynamic kinds are stored head first.
    pub fn new(grid: Grid, pilot_cells: &[usize], dynamic_kinds: &[DynamicKind]) -> Result<Self> {
        let n_g = grid.n_cells();
        let mut is_pilot = vec![false; n_g];
        for &c in pilot_cells {
            if c >= n_g {
                return Err(Error::validation(format!(
                    "pilot cell {c} is outside the grid of {n_g} cells"
                )));
            }
            if is_pilot[c] {
                return Err(Error::validation(format!("pilot cell {c} is listed twice")));
            }
            is_pilot[c] = true;
        }
        let mut kinds = dynamic_kinds.to_vec();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("dynamic kinds must be unique"));
        }
        let nonpilot_cells: Vec<usize> = (0..n_g).filter(|&c| !is_pilot[c]).collect();
        let mut param_index = vec![0; n_g];
        for (k, &c) in pilot_cells.iter().chain(&nonpilot_cells).enumerate() {
            param_index[c] = k;
        }
        Ok(Self {
            grid,
            pilot_cells: pilot_cells.to_vec(),
            nonpilot_cells,
            dynamic_kinds: kinds,
            param_index,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn n_p(&self) -> usize {
        self.pilot_cells.len()
    }

    pub fn n_r(&self) -> usize {
        self.nonpilot_cells.len()
    }

    pub fn n_d(&self) -> usize {
        self.n_cells() * self.dynamic_kinds.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_cells()
    }

    pub fn n_s(&self) -> usize {
        self.n_p() + self.n_r() + self.n_d()
    }

    pub fn pilot_cells(&self) -> &[usize] {
        &self.pilot_cells
    }

    pub fn nonpilot_cells(&self) -> &[usize] {
        &self.nonpilot_cells
    }

    pub fn dynamic_kinds(&self) -> &[DynamicKind] {
        &self.dynamic_kinds
    }

    pub fn pilot_range(&self) -> Range<usize> {
        0..self.n_p()
    }

    pub fn nonpilot_range(&self) -> Range<usize> {
        self.n_p()..self.n_p() + self.n_r()
    }

    pub fn param_range(&self) -> Range<usize> {
        0..self.n_params()
    }

    pub fn dynamic_range(&self) -> Range<usize> {
        self.n_params()..self.n_s()
    }

    pub fn has_kind(&self, kind: DynamicKind) -> bool {
        self.dynamic_kinds.contains(&kind)
    }

    /// Index range of one dynamic field.
    pub fn kind_range(&self, kind: DynamicKind) -> Option<Range<usize>> {
        let pos = self.dynamic_kinds.iter().position(|&k| k == kind)?;
        let start = self.n_params() + pos * self.n_cells();
        Some(start..start + self.n_cells())
    }

    pub fn param_index(&self, cell: usize) -> usize {
        self.param_index[cell]
    }

    pub fn dynamic_index(&self, kind: DynamicKind, cell: usize) -> Option<usize> {
        self.kind_range(kind).map(|r| r.start + cell)
    }

    /// Grid cell an entry of the state vector belongs to.
    pub fn cell_of(&self, index: usize) -> usize {
        let n_p = self.n_p();
        if index < n_p {
            self.pilot_cells[index]
        } else if index < self.n_params() {
            self.nonpilot_cells[index - n_p]
        } else {
            (index - self.n_params()) % self.n_cells()
        }
    }

    pub fn is_pilot_or_dynamic(&self, index: usize) -> bool {
        index < self.n_p() || index >= self.n_params()
    }

    /// Indices of the restricted (pilot + dynamic) sub-state, in state order.
    pub fn pilot_and_dynamic_indices(&self) -> Vec<usize> {
        self.pilot_range().chain(self.dynamic_range()).collect()
    }

    pub fn is_pilot_cell(&self, cell: usize) -> bool {
        self.param_index(cell) < self.n_p()
    }

    /// Checks that every cell in `cells` is a pilot point.
    pub fn require_pilot_cells(&self, cells: &[usize]) -> Result<()> {
        for &c in cells {
            if !self.grid.contains_cell(c) || !self.is_pilot_cell(c) {
                return Err(Error::validation(format!("observation cell {c} is not a pilot point")));
            }
        }
        Ok(())
    }
}

/// One realization of the state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Assembles a state from a per-cell parameter field and per-kind dynamic
    /// fields (each of length `n_cells`, in layout kind order).
    pub fn from_fields(layout: &StateLayout, params: &[f64], dynamics: &[&[f64]]) -> Result<Self> {
        let n_g = layout.n_cells();
        check_len("parameter field", n_g, params.len())?;
        check_len("dynamic field count", layout.dynamic_kinds().len(), dynamics.len())?;
        let mut v = Vec::with_capacity(layout.n_s());
        v.extend(layout.pilot_cells().iter().map(|&c| params[c]));
        v.extend(layout.nonpilot_cells().iter().map(|&c| params[c]));
        for d in dynamics {
            check_len("dynamic field", n_g, d.len())?;
            v.extend_from_slice(d);
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Splits into `(x_p, x_r, x_d)`.
    pub fn partition<'a>(&'a self, layout: &StateLayout) -> Result<(&'a [f64], &'a [f64], &'a [f64])> {
        check_len("state vector", layout.n_s(), self.len())?;
        let (p, rest) = self.0.split_at(layout.n_p());
        let (r, d) = rest.split_at(layout.n_r());
        Ok((p, r, d))
    }

    pub fn concat(x_p: &[f64], x_r: &[f64], x_d: &[f64]) -> Self {
        let mut v = Vec::with_capacity(x_p.len() + x_r.len() + x_d.len());
        v.extend_from_slice(x_p);
        v.extend_from_slice(x_r);
        v.extend_from_slice(x_d);
        Self(v)
    }

    /// Parameter values scattered back to grid-cell order.
    pub fn parameter_field(&self, layout: &StateLayout) -> Vec<f64> {
        (0..layout.n_cells()).map(|c| self.0[layout.param_index(c)]).collect()
    }

    pub fn set_parameter_field(&mut self, layout: &StateLayout, field: &[f64]) {
        for (c, &v) in field.iter().enumerate() {
            self.0[layout.param_index(c)] = v;
        }
    }

    pub fn dynamic_field(&self, layout: &StateLayout, kind: DynamicKind) -> Option<&[f64]> {
        layout.kind_range(kind).map(|r| &self.0[r])
    }

    pub fn dynamic_field_mut(&mut self, layout: &StateLayout, kind: DynamicKind) -> Option<&mut [f64]> {
        layout.kind_range(kind).map(move |r| &mut self.0[r])
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl core::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// An ensemble of realizations sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    layout: Arc<StateLayout>,
    members: Vec<StateVector>,
}

impl Ensemble {
    pub fn new(layout: Arc<StateLayout>, members: Vec<StateVector>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::validation(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        for m in &members {
            check_len("ensemble member", layout.n_s(), m.len())?;
        }
        Ok(Self { layout, members })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<StateLayout> {
        &self.layout
    }

    pub fn n_e(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [StateVector] {
        &mut self.members
    }

    pub fn into_members(self) -> Vec<StateVector> {
        self.members
    }

    /// Replaces the members, keeping the layout.
    pub fn with_members(&self, members: Vec<StateVector>) -> Result<Self> {
        Self::new(self.layout.clone(), members)
    }

    pub fn mean(&self) -> Vec<f64> {
        mean_of(self.members.iter().map(|m| m.as_slice()), self.layout.n_s())
    }

    /// Member deviations from the mean for the given state indices, as an
    /// `indices.len() × n_e` matrix.
    pub fn anomalies(&self, indices: &[usize]) -> Matrix {
        let n_e = self.n_e();
        let mut a = Matrix::zeros(indices.len(), n_e);
        for (row, &idx) in indices.iter().enumerate() {
            let mean = self.members.iter().map(|m| m[idx]).sum::<f64>() / n_e as f64;
            for (k, m) in self.members.iter().enumerate() {
                a[(row, k)] = m[idx] - mean;
            }
        }
        a
    }

    /// Anomalies of the full state (`n_s × n_e`).
    pub fn full_anomalies(&self) -> Matrix {
        let n_s = self.layout.n_s();
        let n_e = self.n_e();
        let mean = self.mean();
        let mut a = Matrix::zeros(n_s, n_e);
        for (k, m) in self.members.iter().enumerate() {
            for i in 0..n_s {
                a[(i, k)] = m[i] - mean[i];
            }
        }
        a
    }

    /// Per-entry unbiased sample variance.
    pub fn variances(&self) -> Vec<f64> {
        let n_s = self.layout.n_s();
        let mean = self.mean();
        let mut var = vec![0.0; n_s];
        for m in &self.members {
            for i in 0..n_s {
                let d = m[i] - mean[i];
                var[i] += d * d;
            }
        }
        let denom = (self.n_e() - 1) as f64;
        var.iter_mut().for_each(|v| *v /= denom);
        var
    }
}

pub(crate) fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Vec<f64> {
    let mut mean = vec![0.0; n];
    let mut count = 0usize;
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        count += 1;
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    mean
}

/// Ensemble mean and full `n_s × n_s` sample covariance (divisor `n_e − 1`).
///
/// The analysis steps never build this matrix; it exists for small instances
/// and tests.
pub fn ensemble_moments(ens: &Ensemble) -> Result<(StateVector, Matrix)> {
    if ens.n_e() < 2 {
        return Err(Error::validation("moments need at least 2 members"));
    }
    let a = ens.full_anomalies();
    let mut cov = a.mul_transpose(&a);
    cov.scale(1.0 / (ens.n_e() - 1) as f64);
    cov.symmetrize();
    Ok((StateVector(ens.mean()), cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::square(n, n as f64).unwrap()
    }

    #[test]
    fn paper_layout_sizes() {
        let g = Grid::square(31, 62.0).unwrap();
        let pilots: Vec<usize> = (0..51).map(|k| k * 17).collect();
        let l = StateLayout::new(g, &pilots, &[DynamicKind::Concentration, DynamicKind::Head]).unwrap();
        assert_eq!((l.n_p(), l.n_r(), l.n_d()), (51, 910, 1922));
        assert_eq!(l.dynamic_kinds(), &[DynamicKind::Head, DynamicKind::Concentration]);
        assert_eq!(l.n_s(), 51 + 910 + 1922);
    }

    #[test]
    fn all_pilots_means_no_nonpilot_block() {
        let l = StateLayout::new(grid(2), &[0, 1, 2, 3], &[DynamicKind::Head]).unwrap();
        assert_eq!(l.n_r(), 0);
        let x = StateVector::new((0..8).map(|v| v as f64).collect());
        let (_, r, _) = x.partition(&l).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn rejects_duplicate_and_out_of_range_pilots() {
        assert!(StateLayout::new(grid(2), &[0, 0], &[DynamicKind::Head]).is_err());
        assert!(StateLayout::new(grid(2), &[4], &[DynamicKind::Head]).is_err());
        assert!(StateLayout::new(grid(2), &[0], &[DynamicKind::Head, DynamicKind::Head]).is_err());
    }

    #[test]
    fn partition_orders_blocks() {
        // n_d is a multiple of n_g, so a 2-cell grid with two kinds gives 1/1/4.
        let g = Grid::new(2, 1, 1.0, 1.0).unwrap();
        let l = StateLayout::new(g, &[1], &[DynamicKind::Head, DynamicKind::Concentration]).unwrap();
        let x = StateVector::new((1..=6).map(f64::from).collect());
        let (p, r, d) = x.partition(&l).unwrap();
        assert_eq!(p, &[1.0]);
        assert_eq!(r, &[2.0]);
        assert_eq!(d, &[3.0, 4.0, 5.0, 6.0]);
        assert!(StateVector::zeros(5).partition(&l).is_err());
    }

    #[test]
    fn concat_of_two_two_two_split() {
        let x = StateVector::concat(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]);
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn parameter_field_scatter_gather() {
        let l = StateLayout::new(grid(3), &[4, 0], &[DynamicKind::Head]).unwrap();
        let field: Vec<f64> = (0..9).map(|c| c as f64 * 10.0).collect();
        let head = [1.0; 9];
        let x = StateVector::from_fields(&l, &field, &[&head]).unwrap();
        assert_eq!(x[0], 40.0);
        assert_eq!(x[1], 0.0);
        assert_eq!(x.parameter_field(&l), field);
        assert_eq!(l.cell_of(0), 4);
        assert_eq!(l.cell_of(2), 1);
        assert_eq!(l.cell_of(9 + 7), 7);
    }

    #[test]
    fn two_member_variance_is_two_a_squared() {
        let l = Arc::new(StateLayout::new(grid(2), &[0], &[]).unwrap());
        let y = [0.3, -1.0, 2.0, 5.0];
        let a = 0.7;
        let up = StateVector::new(y.iter().map(|v| v + a).collect());
        let down = StateVector::new(y.iter().map(|v| v - a).collect());
        let ens = Ensemble::new(l, vec![up, down]).unwrap();
        let (mean, cov) = ensemble_moments(&ens).unwrap();
        for i in 0..4 {
            assert!((mean[i] - y[i]).abs() < 1e-15);
            assert!((cov[(i, i)] - 2.0 * a * a).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_members_have_zero_covariance() {
        let l = Arc::new(StateLayout::new(grid(2), &[0], &[DynamicKind::Head]).unwrap());
        let m = StateVector::new((0..8).map(f64::from).collect());
        let ens = Ensemble::new(l, vec![m.clone(), m.clone(), m]).unwrap();
        let (_, cov) = ensemble_moments(&ens).unwrap();
        assert!(cov.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_member_is_rejected() {
        let l = Arc::new(StateLayout::new(grid(2), &[0], &[]).unwrap());
        assert!(Ensemble::new(l, vec![StateVector::zeros(4)]).is_err());
    }
}

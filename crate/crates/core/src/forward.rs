//! Transient 2D groundwater flow with advective tracer transport.
//!
//! Flow: backward-Euler cell-centered finite volumes for
//! `S_s ∂h/∂t = ∇·(K ∇h)` on a unit-thickness layer, with harmonic-mean
//! face conductivities. Fixed-head cells are eliminated from the system so
//! the matrix stays symmetric positive definite; it is factored once per
//! parameter field and reused for every step.
//!
//! Transport: explicit first-order upwind advection of concentration with
//! the Darcy fluxes of the new head, sub-stepped to keep the Courant number
//! at or below [`MAX_COURANT`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::linalg::BandCholesky;
use crate::state::{DynamicKind, StateLayout, StateVector};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Upper bound on `dt · inflow / pore volume` for one transport sub-step.
pub const MAX_COURANT: f64 = 0.9;

/// Upper bound on advection sub-steps within one model step.
pub const MAX_SUBSTEPS: usize = 1000;

/// Relative residual above which a flow solve is reported as failed.
const SOLVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fluid {
    /// kg/m³
    pub density: f64,
    /// Pa·s
    pub viscosity: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for Fluid {
    fn default() -> Self {
        Self {
            density: 1000.0,
            viscosity: 1e-3,
            gravity: 9.81,
        }
    }
}

/// Hydraulic conductivity in m/s of a log10 permeability (m²).
pub fn permeability_to_conductivity(log10_k: f64, fluid: &Fluid) -> f64 {
    libm::pow(10.0, log10_k) * fluid.density * fluid.gravity / fluid.viscosity
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "type"))]
pub enum EdgeCondition {
    NoFlow,
    /// Every cell along the edge is held at `head`, and at `concentration`
    /// when given.
    Fixed {
        head: f64,
        concentration: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Edges {
    pub south: EdgeCondition,
    pub north: EdgeCondition,
    pub west: EdgeCondition,
    pub east: EdgeCondition,
}

/// Fixed-head cell inside the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Well {
    pub cell: usize,
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub grid: Grid,
    pub period_days: f64,
    pub n_steps: usize,
    pub edges: Edges,
    pub wells: Vec<Well>,
    pub initial_head: f64,
    /// `None` disables transport.
    pub initial_concentration: Option<f64>,
    pub porosity: f64,
    pub fluid: Fluid,
    /// 1/m
    pub specific_storage: f64,
    /// Solve the steady flow equation at every step instead of the transient one.
    pub steady_flow: bool,
}

impl Scenario {
    /// 62 m square, south-to-north gradient of 1 m carrying a tracer front.
    pub fn tracer() -> Self {
        Self {
            grid: Grid::square(31, 62.0).expect("valid grid"),
            period_days: 1200.0,
            n_steps: 1200,
            edges: Edges {
                south: EdgeCondition::Fixed {
                    head: 11.0,
                    concentration: Some(80e-3),
                },
                north: EdgeCondition::Fixed {
                    head: 10.0,
                    concentration: Some(60e-3),
                },
                west: EdgeCondition::NoFlow,
                east: EdgeCondition::NoFlow,
            },
            wells: Vec::new(),
            initial_head: 10.0,
            initial_concentration: Some(60e-3),
            porosity: 0.1,
            fluid: Fluid::default(),
            specific_storage: 1e-4,
            steady_flow: false,
        }
    }

    /// 620 m square with a central injection cell at 11 m and all edges at 10 m.
    pub fn well() -> Self {
        let grid = Grid::square(31, 620.0).expect("valid grid");
        let edge = EdgeCondition::Fixed {
            head: 10.0,
            concentration: None,
        };
        Self {
            grid,
            period_days: 18.0,
            n_steps: 1200,
            edges: Edges {
                south: edge,
                north: edge,
                west: edge,
                east: edge,
            },
            wells: vec![Well {
                cell: grid.cell_at(310.0, 310.0).expect("center inside domain"),
                head: 11.0,
            }],
            initial_head: 10.0,
            initial_concentration: None,
            porosity: 0.1,
            fluid: Fluid::default(),
            specific_storage: 1e-4,
            steady_flow: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::validation("scenario needs at least one time step"));
        }
        if !(self.period_days > 0.0 && self.period_days.is_finite()) {
            return Err(Error::validation(format!(
                "simulation period must be positive, got {}",
                self.period_days
            )));
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return Err(Error::validation(format!(
                "porosity must lie in (0, 1], got {}",
                self.porosity
            )));
        }
        if !(self.specific_storage >= 0.0 && self.specific_storage.is_finite()) {
            return Err(Error::validation("specific storage must be non-negative"));
        }
        if !self.steady_flow && self.specific_storage == 0.0 {
            return Err(Error::validation("transient flow needs a positive specific storage"));
        }
        let f = &self.fluid;
        if !(f.density > 0.0 && f.viscosity > 0.0 && f.gravity > 0.0) {
            return Err(Error::validation("fluid properties must be positive"));
        }
        for w in &self.wells {
            if !self.grid.contains_cell(w.cell) {
                return Err(Error::validation(format!("well cell {} is outside the grid", w.cell)));
            }
        }
        if self.pinned_heads().iter().all(Option::is_none) {
            return Err(Error::validation("scenario needs at least one fixed-head cell"));
        }
        Ok(())
    }

    pub fn dt_seconds(&self) -> f64 {
        self.period_days * SECONDS_PER_DAY / self.n_steps as f64
    }

    pub fn step_to_days(&self, step: usize) -> f64 {
        self.period_days * step as f64 / self.n_steps as f64
    }

    pub fn has_transport(&self) -> bool {
        self.initial_concentration.is_some()
    }

    pub fn dynamic_kinds(&self) -> Vec<DynamicKind> {
        if self.has_transport() {
            vec![DynamicKind::Head, DynamicKind::Concentration]
        } else {
            vec![DynamicKind::Head]
        }
    }

    fn edge_cells(&self) -> [(EdgeCondition, Vec<usize>); 4] {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        [
            (self.edges.south, (0..nx).map(|i| g.cell(i, 0)).collect()),
            (self.edges.north, (0..nx).map(|i| g.cell(i, ny - 1)).collect()),
            (self.edges.west, (0..ny).map(|j| g.cell(0, j)).collect()),
            (self.edges.east, (0..ny).map(|j| g.cell(nx - 1, j)).collect()),
        ]
    }

    /// Fixed head per cell. Later edges in south, north, west, east order
    /// win at shared corners; wells win over edges.
    pub fn pinned_heads(&self) -> Vec<Option<f64>> {
        let mut pinned = vec![None; self.grid.n_cells()];
        for (cond, cells) in self.edge_cells() {
            if let EdgeCondition::Fixed { head, .. } = cond {
                for c in cells {
                    pinned[c] = Some(head);
                }
            }
        }
        for w in &self.wells {
            pinned[w.cell] = Some(w.head);
        }
        pinned
    }

    pub fn pinned_concentrations(&self) -> Vec<Option<f64>> {
        let mut pinned = vec![None; self.grid.n_cells()];
        for (cond, cells) in self.edge_cells() {
            if let EdgeCondition::Fixed {
                concentration: Some(c0),
                ..
            } = cond
            {
                for c in cells {
                    pinned[c] = Some(c0);
                }
            }
        }
        pinned
    }

    /// Range every concentration must stay in: initial and boundary values.
    pub fn concentration_bounds(&self) -> Option<(f64, f64)> {
        let c0 = self.initial_concentration?;
        let (mut lo, mut hi) = (c0, c0);
        for c in self.pinned_concentrations().into_iter().flatten() {
            lo = lo.min(c);
            hi = hi.max(c);
        }
        Some((lo, hi))
    }

    /// Initial head and (if transported) concentration fields, with fixed
    /// cells already at their boundary values.
    pub fn initial_dynamics(&self) -> Vec<Vec<f64>> {
        let head = self
            .pinned_heads()
            .into_iter()
            .map(|p| p.unwrap_or(self.initial_head))
            .collect();
        let mut out = vec![head];
        if let Some(c0) = self.initial_concentration {
            out.push(
                self.pinned_concentrations()
                    .into_iter()
                    .map(|p| p.unwrap_or(c0))
                    .collect(),
            );
        }
        out
    }

    /// Initial state for a given log10-permeability field.
    pub fn initial_state(&self, layout: &StateLayout, log10_k: &[f64]) -> Result<StateVector> {
        self.check_layout(layout)?;
        let dyn_fields = self.initial_dynamics();
        let refs: Vec<&[f64]> = dyn_fields.iter().map(Vec::as_slice).collect();
        StateVector::from_fields(layout, log10_k, &refs)
    }

    pub fn check_layout(&self, layout: &StateLayout) -> Result<()> {
        if layout.grid() != &self.grid {
            return Err(Error::validation("state layout grid differs from the scenario grid"));
        }
        if layout.dynamic_kinds() != self.dynamic_kinds().as_slice() {
            return Err(Error::validation(format!(
                "state layout carries {:?} but the scenario simulates {:?}",
                layout.dynamic_kinds(),
                self.dynamic_kinds()
            )));
        }
        Ok(())
    }
}

/// Flow system assembled for one conductivity field and time step.
#[derive(Debug, Clone)]
pub struct FlowModel {
    grid: Grid,
    /// Conductance of the face between `c` and `c + 1` (index `c`), m²/s.
    cond_east: Vec<f64>,
    /// Conductance of the face between `c` and `c + nx` (index `c`), m²/s.
    cond_north: Vec<f64>,
    pinned: Vec<Option<f64>>,
    /// `S_s · V / dt` per cell, m²/s.
    storage: f64,
    /// Right-hand side contribution of the fixed-head neighbours.
    rhs_fixed: Vec<f64>,
    factor: BandCholesky,
}

impl FlowModel {
    pub fn new(scenario: &Scenario, log10_k: &[f64]) -> Result<Self> {
        let g = scenario.grid;
        let n = g.n_cells();
        check_len("permeability field", n, log10_k.len())?;
        if log10_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("permeability field"));
        }
        let k: Vec<f64> = log10_k
            .iter()
            .map(|&v| permeability_to_conductivity(v, &scenario.fluid))
            .collect();
        let (nx, ny, dx, dy) = (g.nx(), g.ny(), g.dx(), g.dy());
        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut cond_east = vec![0.0; n];
        let mut cond_north = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = g.cell(i, j);
                if i + 1 < nx {
                    cond_east[c] = harmonic(k[c], k[c + 1]) * dy / dx;
                }
                if j + 1 < ny {
                    cond_north[c] = harmonic(k[c], k[c + nx]) * dx / dy;
                }
            }
        }
        let storage = if scenario.steady_flow {
            0.0
        } else {
            scenario.specific_storage * dx * dy / scenario.dt_seconds()
        };
        let pinned = scenario.pinned_heads();

        let mut diag = vec![storage; n];
        let mut rhs_fixed = vec![0.0; n];
        let mut couple = |a: usize, b: usize, t: f64, diag: &mut [f64]| {
            diag[a] += t;
            diag[b] += t;
            if let Some(hb) = pinned[b] {
                rhs_fixed[a] += t * hb;
            }
            if let Some(ha) = pinned[a] {
                rhs_fixed[b] += t * ha;
            }
        };
        for c in 0..n {
            let (i, j) = g.ij(c);
            if i + 1 < nx {
                couple(c, c + 1, cond_east[c], &mut diag);
            }
            if j + 1 < ny {
                couple(c, c + nx, cond_north[c], &mut diag);
            }
        }
        let lower = |a: usize, b: usize| -> f64 {
            if pinned[a].is_some() || pinned[b].is_some() {
                return if a == b { 1.0 } else { 0.0 };
            }
            if a == b {
                diag[a]
            } else if a == b + 1 && !a.is_multiple_of(nx) {
                -cond_east[b]
            } else if a == b + nx {
                -cond_north[b]
            } else {
                0.0
            }
        };
        let factor = BandCholesky::new(n, nx, lower, "flow matrix")?;
        Ok(Self {
            grid: g,
            cond_east,
            cond_north,
            pinned,
            storage,
            rhs_fixed,
            factor,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Advances `head` by one step in place.
    pub fn step(&self, head: &mut [f64]) -> Result<()> {
        let n = self.grid.n_cells();
        check_len("head field", n, head.len())?;
        let old = head.to_vec();
        for c in 0..n {
            head[c] = match self.pinned[c] {
                Some(h) => h,
                None => self.storage * old[c] + self.rhs_fixed[c],
            };
        }
        self.factor.solve_in_place(head);
        let residual = self.residual(&old, head);
        if !(residual <= SOLVE_TOLERANCE) {
            return Err(Error::Solver {
                what: "flow step",
                residual,
            });
        }
        Ok(())
    }

    /// Net inflow through the faces of every cell, m³/s.
    pub fn net_inflow(&self, head: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let nx = g.nx();
        let mut net = vec![0.0; g.n_cells()];
        for c in 0..g.n_cells() {
            let (i, j) = g.ij(c);
            if i + 1 < nx {
                let q = self.cond_east[c] * (head[c] - head[c + 1]);
                net[c] -= q;
                net[c + 1] += q;
            }
            if j + 1 < g.ny() {
                let q = self.cond_north[c] * (head[c] - head[c + nx]);
                net[c] -= q;
                net[c + nx] += q;
            }
        }
        net
    }

    /// Largest mismatch between storage change and net inflow over the free
    /// cells, relative to the largest face flux involved.
    pub fn residual(&self, old: &[f64], new: &[f64]) -> f64 {
        let net = self.net_inflow(new);
        let mut worst = 0.0f64;
        let mut scale = f64::MIN_POSITIVE;
        for c in 0..self.grid.n_cells() {
            if self.pinned[c].is_some() {
                continue;
            }
            let stored = self.storage * (new[c] - old[c]);
            worst = worst.max(libm::fabs(stored - net[c]));
            scale = scale.max(libm::fabs(stored)).max(libm::fabs(net[c]));
        }
        let flux_scale = self
            .cond_east
            .iter()
            .chain(&self.cond_north)
            .fold(0.0f64, |m, &t| m.max(t))
            * head_span(new);
        worst / scale.max(flux_scale).max(f64::MIN_POSITIVE)
    }

    /// Darcy volumetric fluxes (east faces, north faces), positive toward
    /// increasing index, m³/s.
    pub fn face_fluxes(&self, head: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let nx = g.nx();
        let n = g.n_cells();
        let mut east = vec![0.0; n];
        let mut north = vec![0.0; n];
        for c in 0..n {
            let (i, j) = g.ij(c);
            if i + 1 < nx {
                east[c] = self.cond_east[c] * (head[c] - head[c + 1]);
            }
            if j + 1 < g.ny() {
                north[c] = self.cond_north[c] * (head[c] - head[c + nx]);
            }
        }
        (east, north)
    }
}

fn head_span(h: &[f64]) -> f64 {
    let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    (hi - lo).max(1.0)
}

/// One backward-Euler flow step for a fresh conductivity field.
pub fn step_flow(head: &[f64], log10_k: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    let model = FlowModel::new(scenario, log10_k)?;
    let mut h = head.to_vec();
    model.step(&mut h)?;
    Ok(h)
}

/// Upwind advection over `dt` seconds with the given face fluxes. Returns
/// the number of sub-steps taken.
pub fn advect_upwind(
    grid: &Grid,
    conc: &mut [f64],
    flux_east: &[f64],
    flux_north: &[f64],
    pore_volume: f64,
    pinned: &[Option<f64>],
    dt: f64,
) -> Result<usize> {
    let n = grid.n_cells();
    let nx = grid.nx();
    check_len("concentration field", n, conc.len())?;
    if flux_east.iter().chain(flux_north).any(|q| !q.is_finite()) {
        return Err(Error::NonFinite("darcy flux"));
    }
    // incoming (flux, upstream cell) per cell
    let mut inflow = vec![0.0; n];
    for c in 0..n {
        let (i, j) = grid.ij(c);
        if i + 1 < nx {
            let q = flux_east[c];
            if q > 0.0 {
                inflow[c + 1] += q;
            } else {
                inflow[c] -= q;
            }
        }
        if j + 1 < grid.ny() {
            let q = flux_north[c];
            if q > 0.0 {
                inflow[c + nx] += q;
            } else {
                inflow[c] -= q;
            }
        }
    }
    let max_courant = inflow.iter().fold(0.0f64, |m, &q| m.max(q)) * dt / pore_volume;
    let required = libm::ceil(max_courant / MAX_COURANT).max(1.0);
    if !(required <= MAX_SUBSTEPS as f64) {
        return Err(Error::SubstepLimit {
            required,
            limit: MAX_SUBSTEPS,
        });
    }
    let n_sub = required as usize;
    let h = dt / n_sub as f64 / pore_volume;
    let mut delta = vec![0.0; n];
    for _ in 0..n_sub {
        delta.iter_mut().for_each(|d| *d = 0.0);
        for c in 0..n {
            let (i, j) = grid.ij(c);
            if i + 1 < nx {
                let q = flux_east[c];
                if q > 0.0 {
                    delta[c + 1] += q * (conc[c] - conc[c + 1]);
                } else {
                    delta[c] -= q * (conc[c + 1] - conc[c]);
                }
            }
            if j + 1 < grid.ny() {
                let q = flux_north[c];
                if q > 0.0 {
                    delta[c + nx] += q * (conc[c] - conc[c + nx]);
                } else {
                    delta[c] -= q * (conc[c + nx] - conc[c]);
                }
            }
        }
        for c in 0..n {
            if pinned[c].is_none() {
                conc[c] += h * delta[c];
            }
        }
    }
    Ok(n_sub)
}

/// Advects `conc` over one time step using the heads at the new time level.
pub fn step_tracer(conc: &[f64], head: &[f64], log10_k: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    let model = FlowModel::new(scenario, log10_k)?;
    let mut c = conc.to_vec();
    transport_step(&model, scenario, &mut c, head)?;
    Ok(c)
}

fn transport_step(model: &FlowModel, scenario: &Scenario, conc: &mut [f64], head: &[f64]) -> Result<usize> {
    let g = &scenario.grid;
    let (east, north) = model.face_fluxes(head);
    let pore_volume = scenario.porosity * g.dx() * g.dy();
    advect_upwind(
        g,
        conc,
        &east,
        &north,
        pore_volume,
        &scenario.pinned_concentrations(),
        scenario.dt_seconds(),
    )
}

/// Propagates the dynamic part of `state` from step `from` to step `to`;
/// parameters are copied unchanged.
pub fn simulate_window(
    state: &StateVector,
    layout: &StateLayout,
    scenario: &Scenario,
    from: usize,
    to: usize,
) -> Result<StateVector> {
    check_len("state", layout.n_s(), state.len())?;
    if from > to || to > scenario.n_steps {
        return Err(Error::validation(format!(
            "invalid window {from}..{to} for {} steps",
            scenario.n_steps
        )));
    }
    if from == to {
        return Ok(state.clone());
    }
    scenario.check_layout(layout)?;
    let params = state.parameter_field(layout);
    let model = FlowModel::new(scenario, &params)?;
    let mut out = state.clone();
    let mut head = out
        .dynamic_field(layout, DynamicKind::Head)
        .expect("checked layout")
        .to_vec();
    let mut conc = out
        .dynamic_field(layout, DynamicKind::Concentration)
        .map(<[f64]>::to_vec);
    let pinned_conc = scenario.pinned_concentrations();
    let g = &scenario.grid;
    let pore_volume = scenario.porosity * g.dx() * g.dy();
    let dt = scenario.dt_seconds();
    for _ in from..to {
        model.step(&mut head)?;
        if let Some(c) = conc.as_mut() {
            let (east, north) = model.face_fluxes(&head);
            advect_upwind(g, c, &east, &north, pore_volume, &pinned_conc, dt)?;
        }
    }
    out.dynamic_field_mut(layout, DynamicKind::Head)
        .expect("checked layout")
        .copy_from_slice(&head);
    if let Some(c) = conc {
        out.dynamic_field_mut(layout, DynamicKind::Concentration)
            .expect("checked layout")
            .copy_from_slice(&c);
    }
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulated state"));
    }
    Ok(out)
}

/// Cells of a `k × k` sub-grid with equal spacing, centered in the grid.
pub fn regular_cells(grid: &Grid, k: usize) -> Result<Vec<usize>> {
    let (nx, ny) = (grid.nx(), grid.ny());
    if k == 0 || k > nx || k > ny {
        return Err(Error::validation(format!(
            "cannot place a {k}x{k} sub-grid on a {nx}x{ny} grid"
        )));
    }
    let axis = |n: usize| -> Vec<usize> {
        if k == 1 {
            return vec![(n - 1) / 2];
        }
        let stride = (n - 1) / (k - 1);
        let stride = stride.min(n / k).max(1);
        let offset = (n - 1 - stride * (k - 1)) / 2;
        (0..k).map(|a| offset + a * stride).collect()
    };
    let xs = axis(nx);
    let ys = axis(ny);
    Ok(ys
        .iter()
        .flat_map(|&j| xs.iter().map(move |&i| grid.cell(i, j)))
        .collect())
}

/// Where, what and when the system is measured.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationSchedule {
    cells: Vec<usize>,
    kinds: Vec<DynamicKind>,
    steps: Vec<usize>,
    head_std: f64,
    concentration_std: f64,
}

impl ObservationSchedule {
    pub fn new(
        cells: Vec<usize>,
        kinds: Vec<DynamicKind>,
        steps: Vec<usize>,
        head_std: f64,
        concentration_std: f64,
    ) -> Result<Self> {
        if cells.is_empty() || kinds.is_empty() || steps.is_empty() {
            return Err(Error::validation("observation schedule must not be empty"));
        }
        let mut sorted_kinds = kinds;
        sorted_kinds.sort();
        sorted_kinds.dedup();
        if steps.windows(2).any(|w| w[0] >= w[1]) || steps[0] == 0 {
            return Err(Error::validation(
                "observation steps must be positive and strictly increasing",
            ));
        }
        for (name, s) in [("head", head_std), ("concentration", concentration_std)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation(format!("{name} noise std must be positive, got {s}")));
            }
        }
        let mut seen = cells.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("observation cells must be unique"));
        }
        Ok(Self {
            cells,
            kinds: sorted_kinds,
            steps,
            head_std,
            concentration_std,
        })
    }

    /// Two head and concentration sensors at (19 m, 31 m) and (43 m, 31 m).
    pub fn tracer(scenario: &Scenario, n_times: usize) -> Result<Self> {
        let g = &scenario.grid;
        Self::new(
            vec![g.cell_at(19.0, 31.0)?, g.cell_at(43.0, 31.0)?],
            vec![DynamicKind::Head, DynamicKind::Concentration],
            evenly_spaced_steps(scenario.n_steps, n_times)?,
            5e-2,
            7.1e-3,
        )
    }

    /// Head sensors on a regular 7 × 7 sub-grid.
    pub fn well(scenario: &Scenario, n_times: usize) -> Result<Self> {
        Self::new(
            regular_cells(&scenario.grid, 7)?,
            vec![DynamicKind::Head],
            evenly_spaced_steps(scenario.n_steps, n_times)?,
            5e-2,
            7.1e-3,
        )
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn kinds(&self) -> &[DynamicKind] {
        &self.kinds
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn n_m(&self) -> usize {
        self.cells.len() * self.kinds.len()
    }

    pub fn noise_std(&self, kind: DynamicKind) -> f64 {
        match kind {
            DynamicKind::Head => self.head_std,
            DynamicKind::Concentration => self.concentration_std,
        }
    }

    /// Diagonal of R in measurement order.
    pub fn noise_variances(&self) -> Vec<f64> {
        self.kinds
            .iter()
            .flat_map(|&k| {
                let s = self.noise_std(k);
                self.cells.iter().map(move |_| s * s)
            })
            .collect()
    }

    /// State indices read by the measurement operator, kinds outer and cells
    /// inner.
    pub fn state_indices(&self, layout: &StateLayout) -> Result<Vec<usize>> {
        layout.require_pilot_cells(&self.cells)?;
        let mut idx = Vec::with_capacity(self.n_m());
        for &kind in &self.kinds {
            for &c in &self.cells {
                idx.push(
                    layout.dynamic_index(kind, c).ok_or_else(|| {
                        Error::validation(format!("state does not carry {kind:?}, which is observed"))
                    })?,
                );
            }
        }
        Ok(idx)
    }

    pub fn is_scheduled(&self, step: usize) -> bool {
        self.steps.binary_search(&step).is_ok()
    }
}

/// `k · n_steps / n_times` for `k = 1..=n_times`, rounded to the step lattice.
pub fn evenly_spaced_steps(n_steps: usize, n_times: usize) -> Result<Vec<usize>> {
    if n_times == 0 || n_times > n_steps {
        return Err(Error::validation(format!(
            "cannot place {n_times} observation times on {n_steps} steps"
        )));
    }
    Ok((1..=n_times)
        .map(|k| (k as u64 * n_steps as u64 + n_times as u64 / 2) as usize / n_times)
        .collect())
}

/// Simulated measurements of `state` at a scheduled step.
pub fn observe(
    state: &StateVector,
    layout: &StateLayout,
    schedule: &ObservationSchedule,
    step: usize,
) -> Result<Vec<f64>> {
    if !schedule.is_scheduled(step) {
        return Err(Error::validation(format!("step {step} is not an observation time")));
    }
    check_len("state", layout.n_s(), state.len())?;
    Ok(schedule.state_indices(layout)?.into_iter().map(|i| state[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(g: &Grid, v: f64) -> Vec<f64> {
        vec![v; g.n_cells()]
    }

    #[test]
    fn conductivity_of_reference_permeability() {
        let f = Fluid::default();
        let k = permeability_to_conductivity(-12.0, &f);
        assert!((k - 9.81e-6).abs() < 1e-18);
        let ratio = permeability_to_conductivity(-11.0, &f) / k;
        assert!((ratio - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tracer_steady_head_is_linear() {
        let mut s = Scenario::tracer();
        s.steady_flow = true;
        let g = s.grid;
        let h = step_flow(&uniform(&g, 10.0), &uniform(&g, -12.0), &s).unwrap();
        for (c, &hc) in h.iter().enumerate() {
            let (_, j) = g.ij(c);
            assert!((hc - (11.0 - j as f64 / 30.0)).abs() < 1e-8, "cell {c}");
        }
    }

    #[test]
    fn no_flow_everywhere_keeps_uniform_head() {
        let mut s = Scenario::tracer();
        s.edges.south = EdgeCondition::NoFlow;
        s.edges.north = EdgeCondition::NoFlow;
        s.wells = vec![Well { cell: 0, head: 10.0 }];
        let g = s.grid;
        let h = step_flow(&uniform(&g, 10.0), &uniform(&g, -12.0), &s).unwrap();
        let worst = h.iter().map(|v| (v - 10.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn tracer_step_without_gradient_is_identity() {
        let s = Scenario::tracer();
        let g = s.grid;
        let conc: Vec<f64> = (0..g.n_cells()).map(|c| 0.06 + 1e-5 * (c % 7) as f64).collect();
        let mut s2 = s.clone();
        s2.edges.south = EdgeCondition::Fixed {
            head: 10.0,
            concentration: Some(80e-3),
        };
        let out = step_tracer(&conc, &uniform(&g, 10.0), &uniform(&g, -12.0), &s2).unwrap();
        assert_eq!(out, conc);
    }

    #[test]
    fn upwind_on_a_three_cell_line() {
        let g = Grid::new(3, 1, 1.0, 1.0).unwrap();
        let mut c = vec![1.0, 0.0, 0.0];
        // uniform eastward flux 0.5 m³/s, pore volume 1, dt 1 → Courant 0.5
        let n_sub = advect_upwind(
            &g,
            &mut c,
            &[0.5, 0.5, 0.0],
            &[0.0; 3],
            1.0,
            &[Some(1.0), None, None],
            1.0,
        )
        .unwrap();
        assert_eq!(n_sub, 1);
        assert_eq!(c, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn courant_limit_forces_substeps() {
        let g = Grid::new(3, 1, 1.0, 1.0).unwrap();
        let mut c = vec![1.0, 0.0, 0.0];
        let n_sub = advect_upwind(
            &g,
            &mut c,
            &[2.0, 2.0, 0.0],
            &[0.0; 3],
            1.0,
            &[Some(1.0), None, None],
            1.0,
        )
        .unwrap();
        assert_eq!(n_sub, 3);
        assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn excessive_courant_number_is_an_error() {
        let g = Grid::new(3, 1, 1.0, 1.0).unwrap();
        let mut c = vec![1.0, 0.0, 0.0];
        let q = 0.9 * (MAX_SUBSTEPS as f64 + 1.0);
        let err = advect_upwind(&g, &mut c, &[q, q, 0.0], &[0.0; 3], 1.0, &[Some(1.0), None, None], 1.0).unwrap_err();
        assert!(matches!(err, Error::SubstepLimit { .. }));
        assert_eq!(c, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn well_steady_head_is_rotation_symmetric() {
        let mut s = Scenario::well();
        s.steady_flow = true;
        let g = s.grid;
        let h = step_flow(&uniform(&g, 10.0), &uniform(&g, -12.0), &s).unwrap();
        let n = g.nx();
        for j in 0..n {
            for i in 0..n {
                let rotated = g.cell(n - 1 - j, i);
                assert!((h[g.cell(i, j)] - h[rotated]).abs() < 1e-10);
            }
        }
        assert_eq!(h[g.cell(15, 15)], 11.0);
    }

    #[test]
    fn transient_flow_conserves_mass() {
        let s = Scenario::well();
        let g = s.grid;
        let field: Vec<f64> = (0..g.n_cells())
            .map(|c| -12.0 + 0.5 * libm::sin(c as f64 * 0.37))
            .collect();
        let model = FlowModel::new(&s, &field).unwrap();
        let mut h = s.initial_dynamics().remove(0);
        for _ in 0..5 {
            let old = h.clone();
            model.step(&mut h).unwrap();
            assert!(model.residual(&old, &h) < 1e-10);
        }
    }

    #[test]
    fn window_composition_and_static_parameters() {
        let s = Scenario::tracer();
        let g = s.grid;
        let pilots = regular_cells(&g, 7).unwrap();
        let layout = StateLayout::new(g, &pilots, &s.dynamic_kinds()).unwrap();
        let field: Vec<f64> = (0..g.n_cells()).map(|c| -12.0 + 0.3 * libm::cos(c as f64)).collect();
        let x0 = s.initial_state(&layout, &field).unwrap();
        assert_eq!(simulate_window(&x0, &layout, &s, 4, 4).unwrap(), x0);
        let direct = simulate_window(&x0, &layout, &s, 0, 30).unwrap();
        let mid = simulate_window(&x0, &layout, &s, 0, 12).unwrap();
        let chained = simulate_window(&mid, &layout, &s, 12, 30).unwrap();
        assert_eq!(direct, chained);
        assert_eq!(direct.parameter_field(&layout), field);
        assert!(simulate_window(&x0, &layout, &s, 5, 2).is_err());
    }

    #[test]
    fn schedules_have_expected_sizes() {
        let t = Scenario::tracer();
        let st = ObservationSchedule::tracer(&t, 100).unwrap();
        assert_eq!(st.n_m(), 4);
        assert_eq!(st.steps().len(), 100);
        assert_eq!(st.steps()[0], 12);
        assert_eq!(*st.steps().last().unwrap(), 1200);
        let w = Scenario::well();
        let sw = ObservationSchedule::well(&w, 60).unwrap();
        assert_eq!(sw.n_m(), 49);
        assert_eq!(sw.steps()[0], 20);
        assert!(sw.noise_variances().iter().all(|v| (v - 0.0025).abs() < 1e-15));
    }

    #[test]
    fn observing_a_flat_head() {
        let s = Scenario::well();
        let g = s.grid;
        let sched = ObservationSchedule::well(&s, 60).unwrap();
        let layout = StateLayout::new(g, sched.cells(), &s.dynamic_kinds()).unwrap();
        let x = StateVector::from_fields(&layout, &uniform(&g, -12.0), &[&uniform(&g, 10.0)]).unwrap();
        let y = observe(&x, &layout, &sched, 20).unwrap();
        assert_eq!(y, vec![10.0; 49]);
        assert!(observe(&x, &layout, &sched, 21).is_err());
    }

    #[test]
    fn regular_cells_are_centered() {
        let g = Grid::square(31, 62.0).unwrap();
        let cells = regular_cells(&g, 7).unwrap();
        let xs: Vec<usize> = cells[..7].iter().map(|&c| g.ij(c).0).collect();
        assert_eq!(xs, vec![3, 7, 11, 15, 19, 23, 27]);
        assert_eq!(regular_cells(&g, 5).unwrap().len(), 25);
        assert!(regular_cells(&g, 40).is_err());
    }
}

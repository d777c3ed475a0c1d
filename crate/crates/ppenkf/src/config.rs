//! Experiment and suite configuration.
//!
//! Configs are TOML (or JSON) documents whose unset keys take the default of
//! the chosen scenario. `resolved()` fills every optional key so that the
//! written provenance copy reproduces the run on its own.

use std::path::Path;

use ppenkf_core::filters::{FilterConfig, Variant};
use ppenkf_core::forward::{regular_cells, ObservationSchedule, Scenario};
use ppenkf_core::geostat::{CovarianceSource, Variogram};
use ppenkf_core::{DynamicKind, Grid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    #[default]
    Tracer,
    Well,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 2] = [ScenarioId::Tracer, ScenarioId::Well];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Tracer => "tracer",
            ScenarioId::Well => "well",
        }
    }

    pub fn base_scenario(self) -> Scenario {
        match self {
            ScenarioId::Tracer => Scenario::tracer(),
            ScenarioId::Well => Scenario::well(),
        }
    }

    pub fn truth_correlation_length(self) -> f64 {
        match self {
            ScenarioId::Tracer => 50.0,
            ScenarioId::Well => 60.0,
        }
    }

    pub fn default_observation_times(self) -> usize {
        match self {
            ScenarioId::Tracer => 100,
            ScenarioId::Well => 60,
        }
    }

    pub fn default_correlation_kind(self) -> DynamicKind {
        match self {
            ScenarioId::Tracer => DynamicKind::Concentration,
            ScenarioId::Well => DynamicKind::Head,
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Spherical variogram of log10 permeability; unset keys use scenario defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Half the variogram range, in m.
    pub correlation_length: Option<f64>,
    /// Multiplies the correlation length (0.5 half, 1 correct, 2 double).
    pub correlation_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PilotLayout {
    /// 7 × 7 regular grid plus both tracer sensor cells (51 cells).
    #[default]
    Standard,
    /// `size × size` regular grid plus the sensor cells of the scenario.
    Regular,
    /// 7 × 7 grid, the centers of its 6 × 6 squares, and the tracer sensors.
    Diagonal,
    /// 13 × 13 grid (double density of the 7 × 7 grid) and the tracer sensors.
    Doubled,
    /// Every cell is a pilot point.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub layout: PilotLayout,
    /// Side of the regular grid for the `regular` layout.
    pub size: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            layout: PilotLayout::Standard,
            size: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KrigingSource {
    Analytic,
    #[default]
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingConfig {
    pub source: KrigingSource,
    /// Prior realizations for the empirical source.
    pub n_fields: usize,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            source: KrigingSource::Empirical,
            n_fields: 10_000,
        }
    }
}

impl KrigingConfig {
    pub fn covariance_source(&self) -> CovarianceSource {
        match self.source {
            KrigingSource::Analytic => CovarianceSource::Analytic,
            KrigingSource::Empirical => CovarianceSource::Empirical {
                n_fields: self.n_fields,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_steps: Option<usize>,
    pub period_days: Option<f64>,
    pub porosity: Option<f64>,
    /// 1/m
    pub specific_storage: Option<f64>,
    pub steady_flow: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_times: Option<usize>,
    /// m
    pub head_std: Option<f64>,
    /// mol/L
    pub concentration_std: Option<f64>,
    /// Observed variable correlated with the permeability field.
    pub correlation_kind: Option<DynamicKind>,
    /// Observation time index (0-based) whose posterior is correlated;
    /// defaults to the last one.
    pub correlation_time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioId,
    /// Master seed: fixes the synthetic truth, its observations and the
    /// empirical kriging covariance.
    pub seed: u64,
    /// Experiment index: selects the prior ensemble and the perturbations.
    pub experiment: u64,
    pub ensemble_size: usize,
    pub filter: FilterConfig,
    pub truth: FieldConfig,
    pub prior: FieldConfig,
    pub pilots: PilotConfig,
    pub kriging: KrigingConfig,
    pub model: ModelConfig,
    pub observations: ObservationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioId::Tracer,
            seed: 0,
            experiment: 0,
            ensemble_size: 50,
            filter: FilterConfig::default(),
            truth: FieldConfig::default(),
            prior: FieldConfig::default(),
            pilots: PilotConfig::default(),
            kriging: KrigingConfig::default(),
            model: ModelConfig::default(),
            observations: ObservationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioId, variant: Variant, ensemble_size: usize) -> Self {
        Self {
            scenario,
            ensemble_size,
            filter: FilterConfig::new(variant),
            ..Self::default()
        }
    }

    /// Copy with every scenario-dependent default written out.
    pub fn resolved(&self) -> Self {
        let id = self.scenario;
        let base = id.base_scenario();
        let mut out = self.clone();
        let field = |f: &FieldConfig, mean: f64| FieldConfig {
            mean: Some(f.mean.unwrap_or(mean)),
            std: Some(f.std.unwrap_or(0.5)),
            correlation_length: Some(f.correlation_length.unwrap_or(id.truth_correlation_length())),
            correlation_factor: Some(f.correlation_factor.unwrap_or(1.0)),
        };
        out.truth = field(&self.truth, -12.0);
        out.prior = field(&self.prior, -12.5);
        out.model = ModelConfig {
            n_steps: Some(self.model.n_steps.unwrap_or(base.n_steps)),
            period_days: Some(self.model.period_days.unwrap_or(base.period_days)),
            porosity: Some(self.model.porosity.unwrap_or(base.porosity)),
            specific_storage: Some(self.model.specific_storage.unwrap_or(base.specific_storage)),
            steady_flow: Some(self.model.steady_flow.unwrap_or(base.steady_flow)),
        };
        let n_times = self.observations.n_times.unwrap_or(id.default_observation_times());
        out.observations = ObservationConfig {
            n_times: Some(n_times),
            head_std: Some(self.observations.head_std.unwrap_or(5e-2)),
            concentration_std: Some(self.observations.concentration_std.unwrap_or(7.1e-3)),
            correlation_kind: Some(
                self.observations
                    .correlation_kind
                    .unwrap_or(id.default_correlation_kind()),
            ),
            correlation_time: Some(self.observations.correlation_time.unwrap_or(n_times.saturating_sub(1))),
        };
        out
    }

    /// Checks every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        if r.ensemble_size < 2 {
            return Err(AppError::config(
                "ensemble_size",
                format!("must be at least 2, got {}", r.ensemble_size),
            ));
        }
        r.filter
            .validate()
            .map_err(|e| AppError::config("filter", strip_validation(e)))?;
        for (name, f) in [("truth", &r.truth), ("prior", &r.prior)] {
            let factor = f.correlation_factor.unwrap_or(1.0);
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(AppError::config(
                    format!("{name}.correlation_factor"),
                    format!("must be positive, got {factor}"),
                ));
            }
            self.variogram_of(f)
                .map_err(|e| AppError::config(name, strip_validation(e)))?;
        }
        if r.pilots.layout == PilotLayout::Regular && r.pilots.size == 0 {
            return Err(AppError::config("pilots.size", "must be positive"));
        }
        if r.kriging.source == KrigingSource::Empirical && r.kriging.n_fields < 2 {
            return Err(AppError::config("kriging.n_fields", "needs at least 2 fields"));
        }
        self.scenario_model()
            .and_then(|s| s.validate().map_err(Into::into))
            .map_err(|e| AppError::config("model", error_text(e)))?;
        let n_times = r.observations.n_times.expect("resolved");
        let time = r.observations.correlation_time.expect("resolved");
        if time >= n_times {
            return Err(AppError::config(
                "observations.correlation_time",
                format!("must be below n_times = {n_times}, got {time}"),
            ));
        }
        let kind = r.observations.correlation_kind.expect("resolved");
        if kind == DynamicKind::Concentration && self.scenario == ScenarioId::Well {
            return Err(AppError::config(
                "observations.correlation_kind",
                "the well scenario does not observe concentration",
            ));
        }
        self.schedule()
            .map_err(|e| AppError::config("observations", error_text(e)))?;
        self.pilot_cells()
            .map_err(|e| AppError::config("pilots", error_text(e)))?;
        Ok(())
    }

    fn variogram_of(&self, f: &FieldConfig) -> ppenkf_core::Result<Variogram> {
        let length = f.correlation_length.unwrap_or(self.scenario.truth_correlation_length())
            * f.correlation_factor.unwrap_or(1.0);
        Variogram::from_correlation_length(f.mean.unwrap_or(-12.0), f.std.unwrap_or(0.5), length)
    }

    pub fn truth_variogram(&self) -> Result<Variogram> {
        Ok(self.variogram_of(&self.resolved().truth)?)
    }

    pub fn prior_variogram(&self) -> Result<Variogram> {
        Ok(self.variogram_of(&self.resolved().prior)?)
    }

    /// Prior correlation length after the factor, in m.
    pub fn prior_correlation_length(&self) -> f64 {
        let p = self.resolved().prior;
        p.correlation_length.expect("resolved") * p.correlation_factor.expect("resolved")
    }

    pub fn scenario_model(&self) -> Result<Scenario> {
        let r = self.resolved();
        let mut s = self.scenario.base_scenario();
        s.n_steps = r.model.n_steps.expect("resolved");
        s.period_days = r.model.period_days.expect("resolved");
        s.porosity = r.model.porosity.expect("resolved");
        s.specific_storage = r.model.specific_storage.expect("resolved");
        s.steady_flow = r.model.steady_flow.expect("resolved");
        s.validate()?;
        Ok(s)
    }

    pub fn schedule(&self) -> Result<ObservationSchedule> {
        let r = self.resolved();
        let scenario = self.scenario_model()?;
        let n_times = r.observations.n_times.expect("resolved");
        let base = match self.scenario {
            ScenarioId::Tracer => ObservationSchedule::tracer(&scenario, n_times)?,
            ScenarioId::Well => ObservationSchedule::well(&scenario, n_times)?,
        };
        Ok(ObservationSchedule::new(
            base.cells().to_vec(),
            base.kinds().to_vec(),
            base.steps().to_vec(),
            r.observations.head_std.expect("resolved"),
            r.observations.concentration_std.expect("resolved"),
        )?)
    }

    /// Pilot cells of the configured layout, sorted and unique.
    pub fn pilot_cells(&self) -> Result<Vec<usize>> {
        let scenario = self.scenario_model()?;
        let grid = scenario.grid;
        let tracer_sensors = tracer_sensor_cells(&grid)?;
        let mut cells = match self.pilots.layout {
            PilotLayout::Standard => {
                let mut c = regular_cells(&grid, 7)?;
                c.extend(tracer_sensors);
                c
            }
            PilotLayout::Regular => {
                let mut c = regular_cells(&grid, self.pilots.size)?;
                c.extend_from_slice(self.schedule()?.cells());
                c
            }
            PilotLayout::Diagonal => {
                let base = regular_cells(&grid, 7)?;
                let mut c = base.clone();
                for j in 0..6 {
                    for i in 0..6 {
                        let (i0, j0) = grid.ij(base[j * 7 + i]);
                        let (i1, j1) = grid.ij(base[(j + 1) * 7 + i + 1]);
                        c.push(grid.cell((i0 + i1) / 2, (j0 + j1) / 2));
                    }
                }
                c.extend(tracer_sensors);
                c
            }
            PilotLayout::Doubled => {
                let mut c = regular_cells(&grid, 13)?;
                c.extend(tracer_sensors);
                c
            }
            PilotLayout::All => (0..grid.n_cells()).collect(),
        };
        cells.sort_unstable();
        cells.dedup();
        Ok(cells)
    }
}

/// Cells of the two tracer sensors, part of every standard pilot layout.
fn tracer_sensor_cells(grid: &Grid) -> Result<Vec<usize>> {
    Ok(vec![
        grid.cell_at(19.0 * grid.dx() / 2.0, 31.0 * grid.dy() / 2.0)?,
        grid.cell_at(43.0 * grid.dx() / 2.0, 31.0 * grid.dy() / 2.0)?,
    ])
}

fn strip_validation(e: ppenkf_core::Error) -> String {
    match e {
        ppenkf_core::Error::Validation(m) => m,
        other => other.to_string(),
    }
}

fn error_text(e: AppError) -> String {
    match e {
        AppError::Core(c) => strip_validation(c),
        other => other.to_string(),
    }
}

/// Reference-run settings of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub enabled: bool,
    pub ensemble_size: usize,
    /// Experiment index of the reference ensemble, apart from the suite's.
    pub experiment: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ensemble_size: 2_000,
            experiment: 1_000_000,
        }
    }
}

/// Grid of experiments: scenarios × methods × ensemble sizes × prior
/// correlation factors × experiment indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub scenarios: Vec<ScenarioId>,
    pub methods: Vec<Variant>,
    pub ensemble_sizes: Vec<usize>,
    pub correlation_factors: Vec<f64>,
    /// Experiments per cell; indices `0..seeds`.
    pub seeds: u64,
    /// Method the `compare` command measures the others against.
    pub baseline: Variant,
    /// Paired bootstrap resamples for `compare`.
    pub bootstrap_resamples: usize,
    pub reference: ReferenceConfig,
    /// Settings shared by every experiment; its scenario, variant, ensemble
    /// size, prior correlation factor and experiment index are overridden.
    pub base: ExperimentConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioId::ALL.to_vec(),
            methods: Variant::ALL.to_vec(),
            ensemble_sizes: vec![50, 70, 100, 250],
            correlation_factors: vec![1.0],
            seeds: 20,
            baseline: Variant::Enkf,
            bootstrap_resamples: 2_000,
            reference: ReferenceConfig::default(),
            base: ExperimentConfig::default(),
        }
    }
}

/// One cell of the suite grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteCell {
    pub scenario: ScenarioId,
    pub method: Variant,
    pub ensemble_size: usize,
    pub correlation_factor: f64,
    pub experiment: u64,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, empty) in [
            ("scenarios", self.scenarios.is_empty()),
            ("methods", self.methods.is_empty()),
            ("ensemble_sizes", self.ensemble_sizes.is_empty()),
            ("correlation_factors", self.correlation_factors.is_empty()),
        ] {
            if empty {
                return Err(AppError::config(key, "must not be empty"));
            }
        }
        if self.seeds == 0 {
            return Err(AppError::config("seeds", "must be positive"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(AppError::config("bootstrap_resamples", "must be positive"));
        }
        if self.reference.enabled && self.reference.ensemble_size < 2 {
            return Err(AppError::config("reference.ensemble_size", "must be at least 2"));
        }
        if self.reference.experiment < self.seeds {
            return Err(AppError::config(
                "reference.experiment",
                "must not collide with the suite experiment indices",
            ));
        }
        for cell in self.cells() {
            self.experiment(&cell).validate().map_err(|e| match e {
                AppError::Config { path, message } => AppError::config(format!("base.{path}"), message),
                other => other,
            })?;
        }
        Ok(())
    }

    /// All cells in a fixed order: scenario, correlation factor, ensemble
    /// size, method, experiment.
    pub fn cells(&self) -> Vec<SuiteCell> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &correlation_factor in &self.correlation_factors {
                for &ensemble_size in &self.ensemble_sizes {
                    for &method in &self.methods {
                        for experiment in 0..self.seeds {
                            out.push(SuiteCell {
                                scenario,
                                method,
                                ensemble_size,
                                correlation_factor,
                                experiment,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn experiment(&self, cell: &SuiteCell) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.scenario = cell.scenario;
        cfg.filter.variant = cell.method;
        cfg.ensemble_size = cell.ensemble_size;
        cfg.prior.correlation_factor = Some(cell.correlation_factor);
        cfg.experiment = cell.experiment;
        cfg
    }

    /// Large-ensemble EnKF run for one scenario and prior correlation factor.
    pub fn reference_experiment(&self, scenario: ScenarioId, correlation_factor: f64) -> ExperimentConfig {
        let mut cfg = self.experiment(&SuiteCell {
            scenario,
            method: Variant::Enkf,
            ensemble_size: self.reference.ensemble_size,
            correlation_factor,
            experiment: self.reference.experiment,
        });
        cfg.filter = FilterConfig {
            variant: Variant::Enkf,
            ..self.base.filter
        };
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Toml,
    Json,
}

impl Encoding {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Encoding::Json,
            _ => Encoding::Toml,
        }
    }
}

/// Deserializes with path-qualified errors.
pub fn parse_str<T: DeserializeOwned>(text: &str, encoding: Encoding) -> Result<T> {
    match encoding {
        Encoding::Toml => {
            let de = toml::Deserializer::new(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                AppError::config(path, e.into_inner().message().trim().to_string())
            })
        }
        Encoding::Json => {
            let mut de = serde_json::Deserializer::from_str(text);
            let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                AppError::config(path, e.into_inner().to_string())
            })?;
            de.end().map_err(|e| AppError::config(".", e.to_string()))?;
            Ok(value)
        }
    }
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_str(&text, Encoding::from_path(path))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| AppError::Runtime(format!("cannot encode config: {e}")))
}

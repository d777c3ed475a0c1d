//! Twin experiments: synthetic truth, observation synthesis, the
//! forecast–analysis cycle and the final metrics.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use ppenkf_core::filters::{
    damped_analysis, dual_analysis, enkf_analysis, hybrid_analysis, interpolated_analysis, iterative_analysis,
    local_analysis, normal_score_analysis, parameter_background, ppenkf_analysis, FilterConfig, ObservationBatch,
    PriorKriging, Propagator, Variant,
};
use ppenkf_core::forward::{simulate_window, ObservationSchedule, Scenario};
use ppenkf_core::geostat::{build_prior_cross_covariance, FieldGenerator, PriorCrossCovariance, Variogram};
use ppenkf_core::metrics::{cell_means, cell_variances, compute_correlation_field, compute_rmse, CorrelationField};
use ppenkf_core::rng::fill_standard_normal;
use ppenkf_core::{DynamicKind, Ensemble, Grid, Purpose, RngSpec, StateLayout, StateVector};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ScenarioId};
use crate::error::Result;

/// Experiment index of the streams that draw the truth and its noise; the
/// truth depends on the master seed only.
const TRUTH_STREAM: u64 = u64::MAX;

/// Everything fixed by a resolved config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub schedule: ObservationSchedule,
    pub layout: Arc<StateLayout>,
    pub observation_indices: Vec<usize>,
    pub truth_variogram: Variogram,
    pub prior_variogram: Variogram,
    pub correlation_kind: DynamicKind,
    pub correlation_time: usize,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let scenario = config.scenario_model()?;
        let schedule = config.schedule()?;
        let layout = Arc::new(StateLayout::new(
            scenario.grid,
            &config.pilot_cells()?,
            &scenario.dynamic_kinds(),
        )?);
        let observation_indices = schedule.state_indices(&layout)?;
        Ok(Self {
            truth_variogram: config.truth_variogram()?,
            prior_variogram: config.prior_variogram()?,
            correlation_kind: config.observations.correlation_kind.expect("resolved"),
            correlation_time: config.observations.correlation_time.expect("resolved"),
            scenario,
            schedule,
            layout,
            observation_indices,
            config,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.scenario.grid
    }

    pub fn variant(&self) -> Variant {
        self.config.filter.variant
    }

    pub fn n_e(&self) -> usize {
        self.config.ensemble_size
    }

    fn truth_key(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{}",
            self.scenario, self.schedule, self.truth_variogram, self.config.seed
        )
    }

    fn prior_key(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}",
            self.grid(),
            self.layout.pilot_cells(),
            self.prior_variogram,
            self.config.kriging.covariance_source(),
            self.config.seed
        )
    }
}

/// Synthetic truth and its noisy observations.
#[derive(Debug, Clone)]
pub struct Truth {
    pub field: Vec<f64>,
    /// Noise-free measurements per observation time.
    pub clean: Vec<Vec<f64>>,
    /// Measurements with N(0, R) noise per observation time.
    pub observations: Vec<Vec<f64>>,
}

/// Kriging blocks of the prior model for one pilot layout.
#[derive(Debug, Clone)]
pub struct PriorBlocks {
    pub covariance: PriorCrossCovariance,
    pub kriging: PriorKriging,
}

type Slot<T> = Arc<OnceLock<std::result::Result<Arc<T>, ppenkf_core::Error>>>;

/// Memo of expensive artifacts shared by the experiments of one process.
#[derive(Default)]
pub struct Cache {
    generators: Mutex<HashMap<String, Slot<FieldGenerator>>>,
    priors: Mutex<HashMap<String, Slot<PriorBlocks>>>,
    truths: Mutex<HashMap<String, Slot<Truth>>>,
}

fn memo<T>(
    map: &Mutex<HashMap<String, Slot<T>>>,
    key: String,
    build: impl FnOnce() -> ppenkf_core::Result<T>,
) -> ppenkf_core::Result<Arc<T>> {
    let slot = map.lock().expect("cache lock").entry(key).or_default().clone();
    slot.get_or_init(|| build().map(Arc::new)).clone()
}

impl Cache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generator(&self, grid: &Grid, vg: &Variogram) -> Result<Arc<FieldGenerator>> {
        Ok(memo(&self.generators, format!("{grid:?}|{vg:?}"), || {
            FieldGenerator::new(grid, vg)
        })?)
    }

    pub fn prior_blocks(&self, setup: &Setup) -> Result<Arc<PriorBlocks>> {
        Ok(memo(&self.priors, setup.prior_key(), || {
            let covariance = build_prior_cross_covariance(
                &setup.layout,
                &setup.prior_variogram,
                setup.config.kriging.covariance_source(),
                RngSpec::new(setup.config.seed, 0, Purpose::PriorCrossCovariance),
            )?;
            let kriging = PriorKriging::new(
                setup.prior_variogram.mean(),
                covariance.rp(),
                covariance.pp(),
                &setup.layout,
            )?;
            Ok(PriorBlocks { covariance, kriging })
        })?)
    }

    pub fn truth(&self, setup: &Setup) -> Result<Arc<Truth>> {
        let generator = self.generator(setup.grid(), &setup.truth_variogram)?;
        Ok(memo(&self.truths, setup.truth_key(), || {
            synthesize_truth(setup, &generator)
        })?)
    }
}

/// Draws the truth field, simulates it and adds measurement noise.
fn synthesize_truth(setup: &Setup, generator: &FieldGenerator) -> ppenkf_core::Result<Truth> {
    let seed = setup.config.seed;
    let field = generator.sample(&mut RngSpec::new(seed, TRUTH_STREAM, Purpose::Truth).rng());
    let layout = &setup.layout;
    let mut state = setup.scenario.initial_state(layout, &field)?;
    let mut noise_rng = RngSpec::new(seed, TRUTH_STREAM, Purpose::ObservationNoise).rng();
    let std: Vec<f64> = setup.schedule.noise_variances().iter().map(|v| v.sqrt()).collect();
    let mut clean = Vec::new();
    let mut observations = Vec::new();
    let mut from = 0;
    for &step in setup.schedule.steps() {
        state = simulate_window(&state, layout, &setup.scenario, from, step)?;
        from = step;
        let y: Vec<f64> = setup.observation_indices.iter().map(|&i| state[i]).collect();
        let mut z = vec![0.0; y.len()];
        fill_standard_normal(&mut noise_rng, &mut z);
        observations.push(y.iter().zip(&z).zip(&std).map(|((v, e), s)| v + s * e).collect());
        clean.push(y);
    }
    Ok(Truth {
        field,
        clean,
        observations,
    })
}

/// Forward model applied to every member in parallel.
pub struct EnsemblePropagator<'a> {
    pub scenario: &'a Scenario,
}

impl Propagator for EnsemblePropagator<'_> {
    fn propagate(&self, ens: &Ensemble, from: usize, to: usize) -> ppenkf_core::Result<Ensemble> {
        let layout = ens.layout();
        let members = ens
            .members()
            .par_iter()
            .map(|m| simulate_window(m, layout, self.scenario, from, to))
            .collect::<ppenkf_core::Result<Vec<_>>>()?;
        ens.with_members(members)
    }
}

/// Prior ensemble: member `k` comes from its own stream so smaller ensembles
/// are prefixes of larger ones.
pub fn prior_ensemble(setup: &Setup, cache: &Cache) -> Result<Ensemble> {
    let generator = cache.generator(setup.grid(), &setup.prior_variogram)?;
    let cfg = &setup.config;
    let members = (0..setup.n_e())
        .into_par_iter()
        .map(|k| {
            let spec = RngSpec::new(cfg.seed, cfg.experiment, Purpose::Prior).with_sub(k as u64);
            let field = generator.sample(&mut spec.rng());
            setup.scenario.initial_state(&setup.layout, &field)
        })
        .collect::<ppenkf_core::Result<Vec<StateVector>>>()?;
    Ok(Ensemble::new(setup.layout.clone(), members)?)
}

/// One assimilation step as seen by an observer.
pub struct StepView<'a> {
    pub time_index: usize,
    pub step: usize,
    pub forecast: &'a Ensemble,
    pub batch: &'a ObservationBatch,
    pub analysis: &'a Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Failed(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Failed(_) => "failed",
        }
    }
}

/// Correlation between an observed variable and the log-permeability field.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRecord {
    pub cell: usize,
    pub kind: DynamicKind,
    pub field: CorrelationField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: ScenarioId,
    pub method: Variant,
    pub n_e: usize,
    pub seed: u64,
    pub experiment: u64,
    /// Prior correlation length in m.
    pub correlation_length: f64,
    pub status: Status,
    /// Final parameter-mean RMSE against the truth.
    pub rmse: f64,
    /// Final overall parameter STD.
    pub std: f64,
    pub prior_rmse: f64,
    pub prior_std: f64,
    /// RMSE after the first tenth of the observation times.
    pub early_rmse: f64,
    /// `(step, rmse)` after each analysis.
    pub rmse_trace: Vec<(usize, f64)>,
    pub mean_field: Vec<f64>,
    pub variance_field: Vec<f64>,
    pub truth_field: Arc<Vec<f64>>,
    pub correlations: Vec<CorrelationRecord>,
    /// Seconds; excluded from the deterministic outputs.
    pub wall_time: f64,
}

impl ExperimentReport {
    fn failed(setup: &Setup, cause: String, wall_time: f64) -> Self {
        let cfg = &setup.config;
        Self {
            scenario: cfg.scenario,
            method: cfg.filter.variant,
            n_e: cfg.ensemble_size,
            seed: cfg.seed,
            experiment: cfg.experiment,
            correlation_length: cfg.prior_correlation_length(),
            status: Status::Failed(cause),
            rmse: f64::NAN,
            std: f64::NAN,
            prior_rmse: f64::NAN,
            prior_std: f64::NAN,
            early_rmse: f64::NAN,
            rmse_trace: Vec::new(),
            mean_field: Vec::new(),
            variance_field: Vec::new(),
            truth_field: Arc::new(Vec::new()),
            correlations: Vec::new(),
            wall_time,
        }
    }
}

fn parameter_fields(ens: &Ensemble) -> Vec<Vec<f64>> {
    ens.members().iter().map(|m| m.parameter_field(ens.layout())).collect()
}

fn correlation_fields(setup: &Setup, ens: &Ensemble) -> ppenkf_core::Result<Vec<CorrelationRecord>> {
    let fields = parameter_fields(ens);
    let kind = setup.correlation_kind;
    setup
        .schedule
        .cells()
        .iter()
        .map(|&cell| {
            let idx = ens
                .layout()
                .dynamic_index(kind, cell)
                .ok_or(ppenkf_core::Error::Validation(format!("state does not carry {kind:?}")))?;
            let observed: Vec<f64> = ens.members().iter().map(|m| m[idx]).collect();
            Ok(CorrelationRecord {
                cell,
                kind,
                field: compute_correlation_field(&observed, &fields)?,
            })
        })
        .collect()
}

/// Runs one experiment; failures are reported in the status, not as errors.
pub fn run_synthetic_experiment(setup: &Setup, cache: &Cache) -> ExperimentReport {
    run_with_observer(setup, cache, &mut |_| Ok(()))
}

/// As `run_synthetic_experiment`, calling `observer` after every analysis.
pub fn run_with_observer(
    setup: &Setup,
    cache: &Cache,
    observer: &mut dyn FnMut(&StepView<'_>) -> Result<()>,
) -> ExperimentReport {
    let start = Instant::now();
    match run_cycle(setup, cache, observer) {
        Ok(mut report) => {
            report.wall_time = start.elapsed().as_secs_f64();
            report
        }
        Err(e) => ExperimentReport::failed(setup, e.to_string(), start.elapsed().as_secs_f64()),
    }
}

struct Analyzer<'a> {
    filter: FilterConfig,
    propagator: EnsemblePropagator<'a>,
    prior: Option<Arc<PriorBlocks>>,
    background: Vec<f64>,
    initial_dynamics: Vec<f64>,
}

impl Analyzer<'_> {
    fn analyze(
        &self,
        forecast: &Ensemble,
        previous: &Ensemble,
        batch: &ObservationBatch,
        from: usize,
        to: usize,
    ) -> ppenkf_core::Result<Ensemble> {
        let f = &self.filter;
        let prior = || self.prior.as_ref().expect("pilot variants load the prior blocks");
        match f.variant {
            Variant::Enkf => enkf_analysis(forecast, batch),
            Variant::Damped => damped_analysis(forecast, batch, f.damping),
            Variant::Local => local_analysis(forecast, batch, f.localization_length_scale),
            Variant::Hybrid => hybrid_analysis(forecast, batch, f.hybrid_alpha, &self.background),
            Variant::Iterative => iterative_analysis(forecast, batch, &self.initial_dynamics, &self.propagator, to),
            Variant::Dual => dual_analysis(forecast, previous, batch, &self.propagator, from, to),
            Variant::NormalScore => normal_score_analysis(forecast, batch),
            Variant::PpEnkf => ppenkf_analysis(forecast, batch, prior().covariance.rp()),
            Variant::Interpolated => interpolated_analysis(forecast, batch, &prior().kriging),
        }
    }
}

fn run_cycle(
    setup: &Setup,
    cache: &Cache,
    observer: &mut dyn FnMut(&StepView<'_>) -> Result<()>,
) -> Result<ExperimentReport> {
    let cfg = &setup.config;
    let truth = cache.truth(setup)?;
    let variant = cfg.filter.variant;
    let prior = if variant.uses_pilot_points() {
        Some(cache.prior_blocks(setup)?)
    } else {
        None
    };
    let mut ens = prior_ensemble(setup, cache)?;
    if let (Variant::Interpolated, Some(p)) = (variant, &prior) {
        ens = p.kriging.reconstruct_ensemble(&ens)?;
    }
    let initial = parameter_fields(&ens);
    let prior_rmse = compute_rmse(&cell_means(&initial)?, &truth.field)?;
    let prior_std = mean_sqrt(&cell_variances(&initial)?);
    drop(initial);

    let analyzer = Analyzer {
        filter: cfg.filter,
        propagator: EnsemblePropagator {
            scenario: &setup.scenario,
        },
        prior,
        background: parameter_background(&setup.layout, cfg.filter.hybrid_background_variance),
        initial_dynamics: setup.scenario.initial_dynamics().concat(),
    };
    let noise = setup.schedule.noise_variances();
    let n_times = setup.schedule.steps().len();
    let early_index = (n_times / 10).max(1) - 1;
    let mut rmse_trace = Vec::with_capacity(n_times);
    let mut correlations = Vec::new();
    let mut from = 0;
    for (t, &step) in setup.schedule.steps().iter().enumerate() {
        let forecast = analyzer.propagator.propagate(&ens, from, step)?;
        let mut rng = RngSpec::new(cfg.seed, cfg.experiment, Purpose::Perturbation)
            .with_sub(t as u64)
            .rng();
        let batch = ObservationBatch::new(
            truth.observations[t].clone(),
            noise.clone(),
            setup.observation_indices.clone(),
        )?
        .perturb(setup.n_e(), &mut rng);
        let analysis = analyzer.analyze(&forecast, &ens, &batch, from, step)?;
        if analysis
            .members()
            .iter()
            .any(|m| m.as_slice().iter().any(|v| !v.is_finite()))
        {
            return Err(ppenkf_core::Error::NonFinite("analysis ensemble").into());
        }
        observer(&StepView {
            time_index: t,
            step,
            forecast: &forecast,
            batch: &batch,
            analysis: &analysis,
        })?;
        let mean_field = StateVector::new(analysis.mean()).parameter_field(&setup.layout);
        rmse_trace.push((step, compute_rmse(&mean_field, &truth.field)?));
        if t == setup.correlation_time {
            correlations = correlation_fields(setup, &analysis)?;
        }
        ens = analysis;
        from = step;
    }
    let fields = parameter_fields(&ens);
    let mean_field = cell_means(&fields)?;
    let variance_field = cell_variances(&fields)?;
    Ok(ExperimentReport {
        scenario: cfg.scenario,
        method: variant,
        n_e: cfg.ensemble_size,
        seed: cfg.seed,
        experiment: cfg.experiment,
        correlation_length: cfg.prior_correlation_length(),
        status: Status::Ok,
        rmse: compute_rmse(&mean_field, &truth.field)?,
        std: mean_sqrt(&variance_field),
        prior_rmse,
        prior_std,
        early_rmse: rmse_trace[early_index].1,
        rmse_trace,
        mean_field,
        variance_field,
        truth_field: Arc::new(truth.field.clone()),
        correlations,
        wall_time: 0.0,
    })
}

fn mean_sqrt(variances: &[f64]) -> f64 {
    (variances.iter().sum::<f64>() / variances.len() as f64).sqrt()
}

/// Classical EnKF at a large ensemble size: the spread baseline and the
/// reference correlation fields.
pub fn run_reference_benchmark(config: &ExperimentConfig, n_ref: usize, cache: &Cache) -> Result<ExperimentReport> {
    let mut cfg = config.clone();
    cfg.filter.variant = Variant::Enkf;
    cfg.ensemble_size = n_ref;
    let setup = Setup::new(&cfg)?;
    Ok(run_synthetic_experiment(&setup, cache))
}

/// Mean correlation-field RMSE over the observation locations against a
/// reference; locations that are degenerate in the reference are skipped.
pub fn correlation_rmse_against(report: &ExperimentReport, reference: &ExperimentReport) -> Option<f64> {
    if !report.status.is_ok() || !reference.status.is_ok() || report.correlations.len() != reference.correlations.len()
    {
        return None;
    }
    let scores: Vec<f64> = report
        .correlations
        .iter()
        .zip(&reference.correlations)
        .filter(|(_, r)| !r.field.degenerate_observation)
        .map(|(a, r)| ppenkf_core::metrics::correlation_rmse(&a.field.values, &r.field.values))
        .collect::<ppenkf_core::Result<_>>()
        .ok()?;
    if scores.is_empty() {
        return None;
    }
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

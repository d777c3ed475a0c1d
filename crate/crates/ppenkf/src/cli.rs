//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{read_config, to_toml, ExperimentConfig, SuiteConfig};
use crate::error::{AppError, Result};
use crate::experiment::{prior_ensemble, run_synthetic_experiment, Cache, ExperimentReport, Setup};
use crate::output::{Cell, Format, OutputDir, Table};
use crate::suite::{
    aggregate_table, benchmark_table, comparison_table, correlation_table, record_table, rmse_rank_table, run_suite,
    std_rank_table, timing_table, Benchmark, Record, SuiteResult,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ppenkf", version, about = "Pilot point EnKF twin experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML or JSON config; defaults apply to every unset key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the truth field and the prior ensemble of an experiment config.
    GenerateFields(CommonArgs),
    /// Run one twin experiment.
    Run(CommonArgs),
    /// Run a suite of experiments and write aggregate tables.
    Suite(CommonArgs),
    /// Run the large-ensemble EnKF references of a suite config.
    Benchmark(CommonArgs),
    /// Paired comparison of the suite's methods with its baseline.
    Compare(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenerateFields(_) => "generate-fields",
            Command::Run(_) => "run",
            Command::Suite(_) => "suite",
            Command::Benchmark(_) => "benchmark",
            Command::Compare(_) => "compare",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::GenerateFields(a)
            | Command::Run(a)
            | Command::Suite(a)
            | Command::Benchmark(a)
            | Command::Compare(a) => a,
        }
    }
}

/// Provenance written to every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub version: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub format: String,
    pub config: C,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let args = command.args();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(AppError::Validation("--jobs must be positive".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| AppError::Runtime(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match command {
        Command::GenerateFields(a) => generate_fields(a),
        Command::Run(a) => run(a),
        Command::Suite(a) => suite(a, command.name()),
        Command::Benchmark(a) => benchmark(a),
        Command::Compare(a) => compare(a),
    })
}

fn load<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

fn experiment_config(a: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn suite_config(a: &CommonArgs) -> Result<SuiteConfig> {
    let mut cfg: SuiteConfig = load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.base.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest<C: Serialize>(out: &OutputDir, command: &str, a: &CommonArgs, seed: u64, config: C) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: VERSION.to_string(),
        config_path: a.config.as_ref().map(|p| p.display().to_string()),
        seed,
        format: out.format().extension().to_string(),
        config,
    };
    out.write_text("manifest.toml", &to_toml(&manifest)?)?;
    Ok(())
}

/// cell_index, x, y and one column per field.
fn field_table(setup: &Setup, columns: &[&str], fields: &[&[f64]]) -> Table {
    let mut names = vec!["cell_index", "x", "y"];
    names.extend_from_slice(columns);
    let mut t = Table::new(&names);
    let grid = setup.grid();
    for c in 0..grid.n_cells() {
        let (x, y) = grid.center(c);
        let mut row = vec![Cell::from(c), x.into(), y.into()];
        row.extend(fields.iter().map(|f| Cell::from(f[c])));
        t.push(row);
    }
    t
}

fn generate_fields(a: &CommonArgs) -> Result<()> {
    let cfg = experiment_config(a)?;
    let setup = Setup::new(&cfg)?;
    let cache = Cache::new();
    let out = OutputDir::create(&a.out, a.format)?;
    let truth = cache.truth(&setup)?;
    out.write_table("fields/truth", &field_table(&setup, &["value"], &[&truth.field]))?;
    let ens = prior_ensemble(&setup, &cache)?;
    let width = (ens.n_e().max(2) - 1).to_string().len().max(3);
    for (k, m) in ens.members().iter().enumerate() {
        let field = m.parameter_field(&setup.layout);
        out.write_table(
            &format!("fields/prior_{k:0width$}"),
            &field_table(&setup, &["value"], &[&field]),
        )?;
    }
    let mut pilots = Table::new(&["cell_index", "x", "y"]);
    for &c in setup.layout.pilot_cells() {
        let (x, y) = setup.grid().center(c);
        pilots.push(vec![c.into(), x.into(), y.into()]);
    }
    out.write_table("pilot_cells", &pilots)?;
    write_manifest(&out, "generate-fields", a, cfg.seed, cfg.resolved())?;
    eprintln!("wrote truth and {} prior fields to {}", ens.n_e(), a.out.display());
    Ok(())
}

fn summary_table(r: &ExperimentReport) -> Table {
    let mut t = Table::new(&[
        "scenario",
        "method",
        "n_e",
        "corr_len",
        "seed",
        "experiment",
        "rmse",
        "std",
        "prior_rmse",
        "prior_std",
        "early_rmse",
        "status",
        "message",
    ]);
    let message = match &r.status {
        crate::experiment::Status::Ok => String::new(),
        crate::experiment::Status::Failed(m) => m.clone(),
    };
    t.push(vec![
        r.scenario.name().into(),
        r.method.name().into(),
        r.n_e.into(),
        r.correlation_length.into(),
        r.seed.into(),
        r.experiment.into(),
        r.rmse.into(),
        r.std.into(),
        r.prior_rmse.into(),
        r.prior_std.into(),
        r.early_rmse.into(),
        r.status.label().into(),
        message.into(),
    ]);
    t
}

/// Summary, fields, correlation fields and RMSE trace of one report.
fn write_report(out: &OutputDir, prefix: &str, setup: &Setup, r: &ExperimentReport) -> Result<()> {
    out.write_table(&format!("{prefix}summary"), &summary_table(r))?;
    if !r.status.is_ok() {
        return Ok(());
    }
    out.write_table(
        &format!("{prefix}fields"),
        &field_table(
            setup,
            &["truth", "mean", "variance"],
            &[&r.truth_field, &r.mean_field, &r.variance_field],
        ),
    )?;
    let names: Vec<String> = r
        .correlations
        .iter()
        .map(|c| format!("{}_{}", kind_name(c.kind), c.cell))
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let fields: Vec<&[f64]> = r.correlations.iter().map(|c| c.field.values.as_slice()).collect();
    out.write_table(
        &format!("{prefix}correlation"),
        &field_table(setup, &name_refs, &fields),
    )?;
    let mut trace = Table::new(&["step", "time_days", "rmse"]);
    for &(step, rmse) in &r.rmse_trace {
        trace.push(vec![step.into(), setup.scenario.step_to_days(step).into(), rmse.into()]);
    }
    out.write_table(&format!("{prefix}rmse_trace"), &trace)?;
    Ok(())
}

fn kind_name(kind: ppenkf_core::DynamicKind) -> &'static str {
    match kind {
        ppenkf_core::DynamicKind::Head => "head",
        ppenkf_core::DynamicKind::Concentration => "concentration",
    }
}

fn run(a: &CommonArgs) -> Result<()> {
    let cfg = experiment_config(a)?;
    let setup = Setup::new(&cfg)?;
    let out = OutputDir::create(&a.out, a.format)?;
    let report = run_synthetic_experiment(&setup, &Cache::new());
    write_report(&out, "", &setup, &report)?;
    let record = Record::from_report(&report, None);
    out.write_table("timings", &timing_table(&[record]))?;
    write_manifest(&out, "run", a, cfg.seed, cfg.resolved())?;
    match &report.status {
        crate::experiment::Status::Ok => {
            eprintln!(
                "{} {}: rmse {:.4}, std {:.4}",
                cfg.scenario, cfg.filter.variant, report.rmse, report.std
            );
            Ok(())
        }
        crate::experiment::Status::Failed(cause) => Err(AppError::Runtime(format!("experiment failed: {cause}"))),
    }
}

fn write_benchmarks(out: &OutputDir, cfg: &SuiteConfig, benchmarks: &[Benchmark]) -> Result<()> {
    out.write_table("benchmark", &benchmark_table(benchmarks))?;
    for b in benchmarks {
        let setup = Setup::new(&cfg.reference_experiment(b.scenario, b.correlation_factor))?;
        let prefix = format!(
            "reference/{}_{}_",
            b.scenario.name(),
            crate::output::format_sig6(b.report.correlation_length)
        );
        write_report(out, &prefix, &setup, &b.report)?;
    }
    Ok(())
}

/// A suite fails as a whole only when no experiment succeeded.
fn check_systemic(result: &SuiteResult) -> Result<()> {
    if result.records.iter().all(|r| !r.status.is_ok()) {
        return Err(AppError::Runtime("every experiment of the suite failed".into()));
    }
    if result.benchmarks.iter().any(|b| !b.report.status.is_ok()) {
        return Err(AppError::Runtime("a reference benchmark failed".into()));
    }
    Ok(())
}

fn suite(a: &CommonArgs, command: &str) -> Result<()> {
    let cfg = suite_config(a)?;
    let out = OutputDir::create(&a.out, a.format)?;
    let result = run_suite(&cfg, &Cache::new())?;
    write_suite_tables(&out, &cfg, &result)?;
    write_manifest(&out, command, a, cfg.base.seed, &cfg)?;
    let failed = result.records.iter().filter(|r| !r.status.is_ok()).count();
    eprintln!(
        "{} experiments ({failed} failed), tables in {}",
        result.records.len(),
        a.out.display()
    );
    check_systemic(&result)
}

fn write_suite_tables(out: &OutputDir, cfg: &SuiteConfig, result: &SuiteResult) -> Result<()> {
    out.write_table("records", &record_table(&result.records))?;
    out.write_table("timings", &timing_table(&result.records))?;
    out.write_table("aggregate", &aggregate_table(&result.records))?;
    let (ranks, mut warnings) = rmse_rank_table(&result.records, &cfg.methods);
    out.write_table("rmse_ranks", &ranks)?;
    if !result.benchmarks.is_empty() {
        let (std_ranks, w) = std_rank_table(&result.records, &cfg.methods, &result.benchmarks);
        warnings.extend(w);
        out.write_table("std_ranks", &std_ranks)?;
        out.write_table("correlation_rmse", &correlation_table(&result.records))?;
        write_benchmarks(out, cfg, &result.benchmarks)?;
    }
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn benchmark(a: &CommonArgs) -> Result<()> {
    let mut cfg = suite_config(a)?;
    cfg.reference.enabled = true;
    let out = OutputDir::create(&a.out, a.format)?;
    let cache = Cache::new();
    let mut benchmarks = Vec::new();
    for &scenario in &cfg.scenarios {
        for &factor in &cfg.correlation_factors {
            let setup = Setup::new(&cfg.reference_experiment(scenario, factor))?;
            benchmarks.push(Benchmark {
                scenario,
                correlation_factor: factor,
                report: run_synthetic_experiment(&setup, &cache),
            });
        }
    }
    write_benchmarks(&out, &cfg, &benchmarks)?;
    write_manifest(&out, "benchmark", a, cfg.base.seed, &cfg)?;
    let result = SuiteResult {
        records: Vec::new(),
        benchmarks,
    };
    if let Some(b) = result.benchmarks.iter().find(|b| !b.report.status.is_ok()) {
        return Err(AppError::Runtime(format!("{} reference failed", b.scenario)));
    }
    eprintln!("wrote {} references to {}", result.benchmarks.len(), a.out.display());
    Ok(())
}

fn compare(a: &CommonArgs) -> Result<()> {
    let mut cfg = suite_config(a)?;
    if !cfg.methods.contains(&cfg.baseline) {
        cfg.methods.insert(0, cfg.baseline);
    }
    let out = OutputDir::create(&a.out, a.format)?;
    let result = run_suite(&cfg, &Cache::new())?;
    write_suite_tables(&out, &cfg, &result)?;
    out.write_table(
        "comparison",
        &comparison_table(&result, cfg.baseline, cfg.bootstrap_resamples, cfg.base.seed)?,
    )?;
    write_manifest(&out, "compare", a, cfg.base.seed, &cfg)?;
    eprintln!("compared {} methods against {}", cfg.methods.len() - 1, cfg.baseline);
    check_systemic(&result)
}

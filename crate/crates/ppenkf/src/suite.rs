//! Suites of experiments and their aggregate tables.

use std::collections::BTreeMap;

use ppenkf_core::filters::Variant;
use ppenkf_core::metrics::rank_methods;
use rayon::prelude::*;

use crate::config::{ScenarioId, SuiteConfig};
use crate::error::Result;
use crate::experiment::{correlation_rmse_against, run_synthetic_experiment, Cache, ExperimentReport, Setup, Status};
use crate::output::{Cell, Table};
use crate::stats::{mean, paired_bootstrap, standard_error};

/// Scalar outcome of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub scenario: ScenarioId,
    pub method: Variant,
    pub n_e: usize,
    /// Prior correlation length in m.
    pub corr_len: f64,
    /// Experiment index.
    pub seed: u64,
    pub rmse: f64,
    pub std: f64,
    pub correlation_rmse: Option<f64>,
    pub status: Status,
    pub wall_time: f64,
}

impl Record {
    pub fn from_report(report: &ExperimentReport, reference: Option<&ExperimentReport>) -> Self {
        Self {
            scenario: report.scenario,
            method: report.method,
            n_e: report.n_e,
            corr_len: report.correlation_length,
            seed: report.experiment,
            rmse: report.rmse,
            std: report.std,
            correlation_rmse: reference.and_then(|r| correlation_rmse_against(report, r)),
            status: report.status.clone(),
            wall_time: report.wall_time,
        }
    }
}

pub const RECORD_COLUMNS: [&str; 10] = [
    "scenario",
    "method",
    "n_e",
    "corr_len",
    "seed",
    "rmse",
    "std",
    "correlation_rmse",
    "status",
    "message",
];

pub fn record_table(records: &[Record]) -> Table {
    let mut t = Table::new(&RECORD_COLUMNS);
    for r in records {
        let message = match &r.status {
            Status::Ok => String::new(),
            Status::Failed(m) => m.clone(),
        };
        t.push(vec![
            r.scenario.name().into(),
            r.method.name().into(),
            r.n_e.into(),
            r.corr_len.into(),
            r.seed.into(),
            r.rmse.into(),
            r.std.into(),
            r.correlation_rmse.into(),
            r.status.label().into(),
            message.into(),
        ]);
    }
    t
}

/// Parses a table written by `record_table`; wall times are not stored there.
pub fn records_from_table(t: &Table) -> Result<Vec<Record>> {
    let col = |name: &str| {
        t.column(name)
            .ok_or_else(|| crate::error::AppError::Validation(format!("records table lacks column {name}")))
    };
    let idx: Vec<usize> = RECORD_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let bad = |what: &str| crate::error::AppError::Validation(format!("records table has a bad {what}"));
    t.rows
        .iter()
        .map(|row| {
            let text = |k: usize| row[idx[k]].to_text();
            let num = |k: usize| row[idx[k]].as_f64();
            let scenario = match text(0).as_str() {
                "tracer" => ScenarioId::Tracer,
                "well" => ScenarioId::Well,
                _ => return Err(bad("scenario")),
            };
            let status = match text(8).as_str() {
                "ok" => Status::Ok,
                "failed" => Status::Failed(text(9)),
                _ => return Err(bad("status")),
            };
            Ok(Record {
                scenario,
                method: Variant::from_name(&text(1)).ok_or_else(|| bad("method"))?,
                n_e: num(2).ok_or_else(|| bad("n_e"))? as usize,
                corr_len: num(3).ok_or_else(|| bad("corr_len"))?,
                seed: num(4).ok_or_else(|| bad("seed"))? as u64,
                rmse: num(5).unwrap_or(f64::NAN),
                std: num(6).unwrap_or(f64::NAN),
                correlation_rmse: num(7),
                status,
                wall_time: f64::NAN,
            })
        })
        .collect()
}

pub fn timing_table(records: &[Record]) -> Table {
    let mut t = Table::new(&["scenario", "method", "n_e", "corr_len", "seed", "wall_time"]);
    for r in records {
        t.push(vec![
            r.scenario.name().into(),
            r.method.name().into(),
            r.n_e.into(),
            r.corr_len.into(),
            r.seed.into(),
            r.wall_time.into(),
        ]);
    }
    t
}

/// Large-ensemble EnKF outcome for one scenario and prior correlation length.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub scenario: ScenarioId,
    pub correlation_factor: f64,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub records: Vec<Record>,
    pub benchmarks: Vec<Benchmark>,
}

/// Runs the references first, then every cell of the grid. Results come
/// back in grid order whatever the execution order.
pub fn run_suite(cfg: &SuiteConfig, cache: &Cache) -> Result<SuiteResult> {
    cfg.validate()?;
    let mut benchmarks = Vec::new();
    if cfg.reference.enabled {
        for &scenario in &cfg.scenarios {
            for &factor in &cfg.correlation_factors {
                let setup = Setup::new(&cfg.reference_experiment(scenario, factor))?;
                benchmarks.push(Benchmark {
                    scenario,
                    correlation_factor: factor,
                    report: run_synthetic_experiment(&setup, cache),
                });
            }
        }
    }
    let cells = cfg.cells();
    let setups: Vec<Setup> = cells
        .iter()
        .map(|c| Setup::new(&cfg.experiment(c)))
        .collect::<Result<_>>()?;
    let records = setups
        .par_iter()
        .zip(&cells)
        .map(|(setup, cell)| {
            let report = run_synthetic_experiment(setup, cache);
            let reference = benchmarks
                .iter()
                .find(|b| b.scenario == cell.scenario && b.correlation_factor == cell.correlation_factor)
                .map(|b| &b.report);
            Record::from_report(&report, reference)
        })
        .collect();
    Ok(SuiteResult { records, benchmarks })
}

type CellKey = (ScenarioId, u64, usize, Variant);

fn length_key(corr_len: f64) -> u64 {
    corr_len.to_bits()
}

fn grouped(records: &[Record]) -> BTreeMap<CellKey, Vec<&Record>> {
    let mut map: BTreeMap<CellKey, Vec<&Record>> = BTreeMap::new();
    for r in records {
        map.entry((r.scenario, length_key(r.corr_len), r.n_e, r.method))
            .or_default()
            .push(r);
    }
    map
}

fn ok_values(rs: &[&Record], f: impl Fn(&Record) -> Option<f64>) -> Vec<f64> {
    rs.iter()
        .filter(|r| r.status.is_ok())
        .filter_map(|r| f(r))
        .filter(|v| v.is_finite())
        .collect()
}

fn mean_or_missing(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

/// Mean RMSE, STD and correlation RMSE per (scenario, corr_len, n_e, method).
pub fn aggregate_table(records: &[Record]) -> Table {
    let mut t = Table::new(&[
        "scenario",
        "method",
        "n_e",
        "corr_len",
        "n_ok",
        "n_failed",
        "mean_rmse",
        "se_rmse",
        "mean_std",
        "mean_correlation_rmse",
    ]);
    for ((scenario, len, n_e, method), rs) in grouped(records) {
        let rmse = ok_values(&rs, |r| Some(r.rmse));
        let std = ok_values(&rs, |r| Some(r.std));
        let corr = ok_values(&rs, |r| r.correlation_rmse);
        let n_ok = rs.iter().filter(|r| r.status.is_ok()).count();
        t.push(vec![
            scenario.name().into(),
            method.name().into(),
            n_e.into(),
            f64::from_bits(len).into(),
            n_ok.into(),
            (rs.len() - n_ok).into(),
            mean_or_missing(&rmse).into(),
            (rmse.len() >= 2).then(|| standard_error(&rmse)).into(),
            mean_or_missing(&std).into(),
            mean_or_missing(&corr).into(),
        ]);
    }
    t
}

/// Average ranks per scenario over the (corr_len, n_e) cells; `score` maps a
/// cell's records to the value ranked (lower is better).
fn scenario_ranks(
    records: &[Record],
    scenario: ScenarioId,
    methods: &[Variant],
    score: &dyn Fn(&[&Record], u64) -> Option<f64>,
) -> std::result::Result<Vec<f64>, String> {
    let groups = grouped(records);
    let mut cells: Vec<(u64, usize)> = groups.keys().filter(|k| k.0 == scenario).map(|k| (k.1, k.2)).collect();
    cells.sort_unstable();
    cells.dedup();
    let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    let scores: Vec<Vec<Option<f64>>> = methods
        .iter()
        .map(|&m| {
            cells
                .iter()
                .map(|&(len, n_e)| groups.get(&(scenario, len, n_e, m)).and_then(|rs| score(rs, len)))
                .collect()
        })
        .collect();
    rank_methods(&names, &scores).map_err(|e| e.to_string())
}

/// Score of one (scenario, seed) cell from its records.
pub type CellScore<'a> = dyn Fn(&[&Record], ScenarioId, u64) -> Option<f64> + 'a;

/// Table with columns method, tracer_avg_rank, well_avg_rank. Scenarios that
/// cannot be ranked leave their column empty; the reasons are returned.
pub fn rank_table(records: &[Record], methods: &[Variant], score: &CellScore<'_>) -> (Table, Vec<String>) {
    let mut t = Table::new(&["method", "tracer_avg_rank", "well_avg_rank"]);
    let mut warnings = Vec::new();
    let per_scenario: Vec<Option<Vec<f64>>> = ScenarioId::ALL
        .iter()
        .map(|&s| {
            if !records.iter().any(|r| r.scenario == s) {
                return None;
            }
            match scenario_ranks(records, s, methods, &|rs, len| score(rs, s, len)) {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("{s} ranks: {e}"));
                    None
                }
            }
        })
        .collect();
    for (k, m) in methods.iter().enumerate() {
        let mut row = vec![Cell::from(m.name())];
        for s in &per_scenario {
            row.push(s.as_ref().map(|r| r[k]).into());
        }
        t.push(row);
    }
    (t, warnings)
}

pub fn rmse_rank_table(records: &[Record], methods: &[Variant]) -> (Table, Vec<String>) {
    rank_table(records, methods, &|rs, _, _| {
        mean_or_missing(&ok_values(rs, |r| Some(r.rmse)))
    })
}

/// Ranks by closeness of the mean STD to the benchmark STD.
pub fn std_rank_table(records: &[Record], methods: &[Variant], benchmarks: &[Benchmark]) -> (Table, Vec<String>) {
    rank_table(records, methods, &|rs, scenario, len| {
        let bench = benchmarks
            .iter()
            .find(|b| b.scenario == scenario && length_key(b.report.correlation_length) == len)
            .filter(|b| b.report.status.is_ok())?;
        mean_or_missing(&ok_values(rs, |r| Some(r.std))).map(|s| (s - bench.report.std).abs())
    })
}

/// Mean correlation-field RMSE: method, n_e, corr_len, tracer, well.
pub fn correlation_table(records: &[Record]) -> Table {
    let mut t = Table::new(&["method", "n_e", "corr_len", "tracer", "well"]);
    let groups = grouped(records);
    let mut rows: BTreeMap<(Variant, usize, u64), [Option<f64>; 2]> = BTreeMap::new();
    for ((scenario, len, n_e, method), rs) in &groups {
        let v = mean_or_missing(&ok_values(rs, |r| r.correlation_rmse));
        let k = ScenarioId::ALL
            .iter()
            .position(|s| s == scenario)
            .expect("known scenario");
        rows.entry((*method, *n_e, *len)).or_default()[k] = v;
    }
    for ((method, n_e, len), v) in rows {
        t.push(vec![
            method.name().into(),
            n_e.into(),
            f64::from_bits(len).into(),
            v[0].into(),
            v[1].into(),
        ]);
    }
    t
}

pub fn benchmark_table(benchmarks: &[Benchmark]) -> Table {
    let mut t = Table::new(&["scenario", "corr_len", "n_e", "rmse", "std", "prior_std", "status"]);
    for b in benchmarks {
        let r = &b.report;
        t.push(vec![
            b.scenario.name().into(),
            r.correlation_length.into(),
            r.n_e.into(),
            r.rmse.into(),
            r.std.into(),
            r.prior_std.into(),
            r.status.label().into(),
        ]);
    }
    t
}

/// Paired comparison of every method with the baseline over the shared
/// experiment indices of each (scenario, corr_len, n_e) cell.
pub fn comparison_table(result: &SuiteResult, baseline: Variant, resamples: usize, seed: u64) -> Result<Table> {
    let mut t = Table::new(&[
        "scenario",
        "corr_len",
        "n_e",
        "method",
        "baseline",
        "n_pairs",
        "mean_rmse",
        "baseline_mean_rmse",
        "rmse_diff",
        "rmse_diff_se",
        "rmse_diff_lower_95",
        "rmse_diff_upper_95",
        "rmse_wins",
        "std_gap_diff",
        "std_gap_diff_upper_95",
    ]);
    let groups = grouped(&result.records);
    for ((scenario, len, n_e, method), rs) in &groups {
        if *method == baseline {
            continue;
        }
        let Some(base) = groups.get(&(*scenario, *len, *n_e, baseline)) else {
            continue;
        };
        let pairs: Vec<(&Record, &Record)> = rs
            .iter()
            .filter(|r| r.status.is_ok() && r.rmse.is_finite())
            .filter_map(|r| {
                base.iter()
                    .find(|b| b.seed == r.seed && b.status.is_ok() && b.rmse.is_finite())
                    .map(|b| (*r, *b))
            })
            .collect();
        let a: Vec<f64> = pairs.iter().map(|p| p.0.rmse).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1.rmse).collect();
        let boot = if pairs.is_empty() {
            None
        } else {
            Some(paired_bootstrap(&a, &b, resamples, seed)?)
        };
        let bench = result
            .benchmarks
            .iter()
            .find(|x| x.scenario == *scenario && length_key(x.report.correlation_length) == *len)
            .filter(|x| x.report.status.is_ok())
            .map(|x| x.report.std);
        let gap = match (bench, pairs.is_empty()) {
            (Some(s), false) => {
                let ga: Vec<f64> = pairs.iter().map(|p| (p.0.std - s).abs()).collect();
                let gb: Vec<f64> = pairs.iter().map(|p| (p.1.std - s).abs()).collect();
                Some(paired_bootstrap(&ga, &gb, resamples, seed)?)
            }
            _ => None,
        };
        t.push(vec![
            scenario.name().into(),
            f64::from_bits(*len).into(),
            (*n_e).into(),
            method.name().into(),
            baseline.name().into(),
            pairs.len().into(),
            mean_or_missing(&a).into(),
            mean_or_missing(&b).into(),
            boot.map(|x| x.mean).into(),
            boot.map(|x| x.standard_error).into(),
            boot.map(|x| x.lower_95).into(),
            boot.map(|x| x.upper_95).into(),
            pairs.iter().filter(|p| p.0.rmse < p.1.rmse).count().into(),
            gap.map(|x| x.mean).into(),
            gap.map(|x| x.upper_one_sided_95).into(),
        ]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scenario: ScenarioId, method: Variant, n_e: usize, seed: u64, rmse: f64, std: f64) -> Record {
        Record {
            scenario,
            method,
            n_e,
            corr_len: 50.0,
            seed,
            rmse,
            std,
            correlation_rmse: Some(rmse / 2.0),
            status: Status::Ok,
            wall_time: 1.0,
        }
    }

    #[test]
    fn record_table_round_trips() {
        let mut failed = record(ScenarioId::Well, Variant::Dual, 70, 3, f64::NAN, f64::NAN);
        failed.status = Status::Failed("solver diverged, step 4".into());
        failed.correlation_rmse = None;
        let records = vec![
            record(ScenarioId::Tracer, Variant::PpEnkf, 50, 0, 0.412345, 0.23),
            failed,
        ];
        let text = record_table(&records).to_csv().unwrap();
        let back = records_from_table(&Table::from_csv(&text).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].rmse, 0.412345);
        assert_eq!(back[0].method, Variant::PpEnkf);
        assert_eq!(back[1].status, records[1].status);
        assert!(back[1].rmse.is_nan());
        assert_eq!(record_table(&back).to_csv().unwrap(), text);
    }

    #[test]
    fn ranks_follow_mean_rmse() {
        let mut records = Vec::new();
        for seed in 0..3 {
            for (m, base) in [(Variant::Enkf, 0.6), (Variant::PpEnkf, 0.5)] {
                for n_e in [50, 70] {
                    records.push(record(ScenarioId::Tracer, m, n_e, seed, base + seed as f64 * 0.01, 0.2));
                }
            }
        }
        let (t, warnings) = rmse_rank_table(&records, &[Variant::Enkf, Variant::PpEnkf]);
        assert!(warnings.is_empty());
        assert_eq!(t.columns, ["method", "tracer_avg_rank", "well_avg_rank"]);
        assert_eq!(t.rows[0][1], Cell::Float(2.0));
        assert_eq!(t.rows[1][1], Cell::Float(1.0));
        assert_eq!(t.rows[0][2], Cell::Missing);
    }

    #[test]
    fn missing_method_cells_are_reported() {
        let records = vec![record(ScenarioId::Well, Variant::Enkf, 50, 0, 0.5, 0.2)];
        let (t, warnings) = rmse_rank_table(&records, &[Variant::Enkf, Variant::Local]);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("local[0]"), "{warnings:?}");
        assert_eq!(t.rows[0][2], Cell::Missing);
    }

    #[test]
    fn single_method_single_seed_aggregates_to_one_row() {
        let records = vec![record(ScenarioId::Tracer, Variant::Enkf, 50, 0, 0.5, 0.2)];
        let t = aggregate_table(&records);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0][6], Cell::Float(0.5));
        let (r, _) = rmse_rank_table(&records, &[Variant::Enkf]);
        assert_eq!(r.rows[0][1], Cell::Float(1.0));
    }

    #[test]
    fn comparison_pairs_by_seed() {
        let mut records = Vec::new();
        for seed in 0..5 {
            records.push(record(
                ScenarioId::Tracer,
                Variant::Enkf,
                50,
                seed,
                0.6 + seed as f64 * 0.01,
                0.1,
            ));
            records.push(record(
                ScenarioId::Tracer,
                Variant::PpEnkf,
                50,
                seed,
                0.5 + seed as f64 * 0.01,
                0.2,
            ));
        }
        let result = SuiteResult {
            records,
            benchmarks: Vec::new(),
        };
        let t = comparison_table(&result, Variant::Enkf, 200, 0).unwrap();
        assert_eq!(t.rows.len(), 1);
        let diff = t.rows[0][t.column("rmse_diff").unwrap()].as_f64().unwrap();
        assert!((diff + 0.1).abs() < 1e-12);
        assert_eq!(t.rows[0][t.column("rmse_wins").unwrap()], Cell::Int(5));
    }
}

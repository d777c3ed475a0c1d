use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;
use tempfile::TempDir;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn smoke_suite() -> PathBuf {
    crate_dir().join("configs/smoke-suite.toml")
}

fn ppenkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppenkf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Short tracer experiment that finishes in well under a second.
const SHORT_RUN: &str = r#"
ensemble_size = 10
[filter]
variant = "enkf"
[model]
n_steps = 40
period_days = 40.0
[observations]
n_times = 4
[kriging]
source = "analytic"
"#;

/// Relative path to file contents, for every file below `root`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn schema(rel: &str) -> JSONSchema {
    let text = fs::read_to_string(crate_dir().join("schema").join(rel)).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    JSONSchema::compile(&value).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn assert_valid(schema: &JSONSchema, instance: &Value, what: &str) {
    if let Err(errors) = schema.validate(instance) {
        let messages: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{what} does not match its schema: {messages:?}");
    }
}

fn toml_as_json(text: &str) -> Value {
    let value: toml::Value = toml::from_str(text).unwrap();
    serde_json::to_value(value).unwrap()
}

#[test]
fn help_exits_zero_and_bad_arguments_exit_one() {
    assert_eq!(code(&ppenkf(&["--help"])), 0);
    assert_eq!(code(&ppenkf(&["--version"])), 0);
    assert_eq!(code(&ppenkf(&["launch"])), 1);
    assert_eq!(code(&ppenkf(&["run", "--out"])), 1);
    assert_eq!(code(&ppenkf(&["run", "--out", "x", "--format", "xml"])), 1);
}

#[test]
fn invalid_configs_exit_one_with_the_offending_path() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = write(dir.path(), "bad.toml", "[filter]\ndamping = -1.0\n");
    let r = ppenkf(&["run", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
    assert!(stderr(&r).contains("filter"), "{}", stderr(&r));

    let unknown = write(dir.path(), "unknown.toml", "[observations]\nhead_sd = 0.1\n");
    let r = ppenkf(&["run", "--config", unknown.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("observations"), "{}", stderr(&r));

    let typed = write(dir.path(), "typed.json", r#"{"ensemble_size": "fifty"}"#);
    let r = ppenkf(&["run", "--config", typed.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("ensemble_size"), "{}", stderr(&r));

    let suite = write(dir.path(), "suite.toml", "seeds = 0\n");
    let r = ppenkf(&["suite", "--config", suite.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("seeds"), "{}", stderr(&r));

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        code(&ppenkf(&["run", "--config", missing.to_str().unwrap(), "--out", out])),
        1
    );

    let short = write(dir.path(), "short.toml", SHORT_RUN);
    assert_eq!(
        code(&ppenkf(&[
            "run",
            "--config",
            short.to_str().unwrap(),
            "--out",
            out,
            "--jobs",
            "0"
        ])),
        1
    );
    assert!(!Path::new(out).exists(), "nothing is written for invalid input");
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "short.toml", SHORT_RUN);
    let blocker = write(dir.path(), "file", "");
    let out = blocker.join("out");
    let r = ppenkf(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
}

#[test]
fn smoke_suite_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = smoke_suite();
    let mut trees = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        let r = ppenkf(&[
            "compare",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        let mut files = tree(&out);
        assert!(files.remove("timings.csv").is_some());
        trees.push(files);
    }
    for expected in [
        "records.csv",
        "aggregate.csv",
        "rmse_ranks.csv",
        "comparison.csv",
        "manifest.toml",
    ] {
        assert!(trees[0].contains_key(expected), "missing {expected}");
    }
    assert_eq!(trees[0].keys().collect::<Vec<_>>(), trees[1].keys().collect::<Vec<_>>());
    for (name, bytes) in &trees[0] {
        assert!(bytes == &trees[1][name], "{name} differs between reruns");
    }
}

#[test]
fn suite_records_follow_the_grid_and_keep_failures_per_row() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "suite",
        "--config",
        smoke_suite().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = fs::read_to_string(out.join("records.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,method,n_e,corr_len,seed,rmse,std,correlation_rmse,status,message")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.splitn(10, ',').collect()).collect();
    // 3 methods × 2 seeds
    assert_eq!(rows.len(), 6);
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r[1], r[4])).collect();
    assert_eq!(
        keys,
        [
            ("enkf", "0"),
            ("enkf", "1"),
            ("local", "0"),
            ("local", "1"),
            ("pp_enkf", "0"),
            ("pp_enkf", "1")
        ]
    );
    for row in &rows {
        match row[8] {
            "ok" => assert!(row[5].parse::<f64>().unwrap() >= 0.0 && row[9].is_empty()),
            "failed" => assert!(row[5].is_empty() && !row[9].is_empty()),
            other => panic!("unexpected status {other}"),
        }
    }
    assert!(text.ends_with('\n'));
}

#[test]
fn json_tables_match_the_shipped_schemas() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "compare",
        "--config",
        smoke_suite().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let schema_for = |rel: &str| -> &str {
        match rel {
            "records.json" => "output/records.schema.json",
            "timings.json" => "output/timings.schema.json",
            "aggregate.json" => "output/aggregate.schema.json",
            "rmse_ranks.json" | "std_ranks.json" => "output/ranks.schema.json",
            "correlation_rmse.json" => "output/correlation_rmse.schema.json",
            "benchmark.json" => "output/benchmark.schema.json",
            "comparison.json" => "output/comparison.schema.json",
            r if r.ends_with("summary.json") => "output/summary.schema.json",
            r if r.ends_with("rmse_trace.json") => "output/rmse_trace.schema.json",
            r if r.ends_with("fields.json") || r.ends_with("correlation.json") => "output/field.schema.json",
            other => panic!("no schema for {other}"),
        }
    };
    let mut checked = 0;
    for (rel, bytes) in tree(&out) {
        if !rel.ends_with(".json") {
            continue;
        }
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.ends_with('\n'));
        let value: Value = serde_json::from_str(&text).unwrap();
        assert_valid(&schema(schema_for(&rel)), &value, &rel);
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} JSON tables");

    let records: Value = serde_json::from_str(&fs::read_to_string(out.join("records.json")).unwrap()).unwrap();
    let mut broken = records.clone();
    broken[0]["method"] = Value::from("kalman");
    assert!(!schema("output/records.schema.json").is_valid(&broken));
}

#[test]
fn configs_match_the_shipped_schemas() {
    let experiment = schema("experiment-config.schema.json");
    let suite = schema("suite-config.schema.json");
    for entry in fs::read_dir(crate_dir().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).unwrap(),
            _ => toml_as_json(&text),
        };
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let target = if name.contains("suite") { &suite } else { &experiment };
        assert_valid(target, &value, &name);
    }
    assert!(!experiment.is_valid(&serde_json::json!({ "filter": { "damping": -1.0 } })));
    assert!(!experiment.is_valid(&serde_json::json!({ "pilots": { "shape": "grid" } })));
    assert!(!suite.is_valid(&serde_json::json!({ "methods": ["kalman"] })));
}

#[test]
fn manifest_holds_resolved_config_seed_and_version() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "short.toml", SHORT_RUN);
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let manifest = toml_as_json(&fs::read_to_string(out.join("manifest.toml")).unwrap());
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["format"], "csv");
    let resolved = &manifest["config"];
    assert_eq!(resolved["seed"], 7);
    assert_eq!(resolved["prior"]["mean"], -12.5);
    assert_eq!(resolved["truth"]["correlation_length"], 50.0);
    assert_eq!(resolved["observations"]["concentration_std"], 0.0071);
    assert_eq!(resolved["filter"]["damping"], 0.1);
    assert_valid(&schema("experiment-config.schema.json"), resolved, "resolved config");

    // the manifest's config alone reproduces the run
    let replay = write(dir.path(), "replay.json", &serde_json::to_string(resolved).unwrap());
    let again = dir.path().join("again");
    let r = ppenkf(&[
        "run",
        "--config",
        replay.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for file in ["summary.csv", "fields.csv", "correlation.csv", "rmse_trace.csv"] {
        assert_eq!(
            fs::read(out.join(file)).unwrap(),
            fs::read(again.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn run_writes_summary_fields_and_trace() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "short.toml", SHORT_RUN);
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..6], ["tracer", "enkf", "10", "50", "0", "0"]);
    assert_eq!(row[11], "ok");
    let fields = fs::read_to_string(out.join("fields.csv")).unwrap();
    assert_eq!(fields.lines().next(), Some("cell_index,x,y,truth,mean,variance"));
    assert_eq!(fields.lines().count(), 1 + 961);
    let trace = fs::read_to_string(out.join("rmse_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4);
    let correlation = fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert_eq!(correlation.lines().next().unwrap().split(',').count(), 3 + 2);
}

#[test]
fn generate_fields_exports_truth_prior_members_and_pilots() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "short.toml", SHORT_RUN);
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "generate-fields",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let files = tree(&out);
    let priors = files.keys().filter(|k| k.starts_with("fields/prior_")).count();
    assert_eq!(priors, 10);
    assert!(files.contains_key("fields/prior_000.csv") && files.contains_key("fields/prior_009.csv"));
    let truth = String::from_utf8(files["fields/truth.csv"].clone()).unwrap();
    assert_eq!(truth.lines().count(), 1 + 961);
    let pilots = String::from_utf8(files["pilot_cells.csv"].clone()).unwrap();
    assert_eq!(pilots.lines().count(), 1 + 51);
}

#[test]
fn benchmark_writes_the_reference_runs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let r = ppenkf(&[
        "benchmark",
        "--config",
        smoke_suite().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let table = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    assert_eq!(
        table.lines().next(),
        Some("scenario,corr_len,n_e,rmse,std,prior_std,status")
    );
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[0], row[2], row[6]), ("tracer", "20", "ok"));
    assert!(out.join("reference/tracer_50_summary.csv").exists());
}

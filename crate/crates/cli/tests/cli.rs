use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn triopts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triopts"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// 200 synthetic rows plus a small NWP config.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = triopts(dir.path(), &["synth", "--rows", "200", "--out", "wind.csv"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let ws = Self { dir };
        ws.write_config("cfg.json", extra);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, extra: &str) {
        let text = format!(
            r#"{{"schema_version": 1,
 "data": {{"path": "wind.csv", "timestamp_col": "timestamp", "target_col": "power",
           "feature_cols": ["WS10", "WD10", "WS100", "WD100"], "mode": {{"kind": "nwp", "alignment": 0}}}},
 "training": {{"epochs": 8, "batch_size": 32, "seed": 4}}{extra}}}"#
        );
        std::fs::write(self.path(name), text).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        triopts(self.dir.path(), args)
    }

    fn train(&self, config: &str, model: &str) {
        let out = self.run(&["--config", config, "--out", model, "train"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }

    fn json(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

#[test]
fn train_writes_model_and_one_trace_row_per_epoch() {
    let ws = Workspace::new("");
    ws.train("cfg.json", "model.json");
    assert!(ws.path("model.json").exists());
    let trace = std::fs::read_to_string(ws.path("model.trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,val_loss");
    assert_eq!(lines.len(), 1 + 8);
}

#[test]
fn missing_column_is_a_schema_error() {
    let ws = Workspace::new("");
    let text = std::fs::read_to_string(ws.path("cfg.json"))
        .unwrap()
        .replace("WD100", "WD200");
    std::fs::write(ws.path("bad.json"), text).unwrap();
    assert_eq!(code(&ws.run(&["--config", "bad.json", "train"])), 2);
}

#[test]
fn nan_in_data_is_an_integrity_error() {
    let ws = Workspace::new("");
    let csv = std::fs::read_to_string(ws.path("wind.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(str::to_string).collect();
    cells[2] = "NaN".into();
    lines[5] = cells.join(",");
    std::fs::write(ws.path("wind.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(code(&ws.run(&["--config", "cfg.json", "train"])), 3);
}

#[test]
fn exploding_learning_rate_exits_with_divergence() {
    let ws = Workspace::new(
        r#", "optimizer": {"fixed_lr": 1e200},
 "triopts": {"centralize": false, "cosine_lr": false, "noise_tau": 0.0}"#,
    );
    let out = ws.run(&["--config", "cfg.json", "train"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let ws = Workspace::new("");
    assert_eq!(code(&ws.run(&["frobnicate"])), 1);
    assert_eq!(code(&ws.run(&["train"])), 1, "missing --config");
    assert_eq!(
        code(&ws.run(&["--config", "cfg.json", "explain", "pfi"])),
        1,
        "missing --model"
    );
}

#[test]
fn deterministic_evaluation_has_exactly_four_keys() {
    let ws = Workspace::new("");
    ws.train("cfg.json", "model.json");
    let report = ws.json(&["--config", "cfg.json", "evaluate", "--model", "model.json"]);
    let mut keys: Vec<&str> = report
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort_unstable();
    assert_eq!(keys, ["n", "nmae", "nrmse", "r2"]);
    let out = ws.run(&[
        "--config",
        "cfg.json",
        "evaluate",
        "--model",
        "model.json",
        "--probabilistic",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn quantile_model_reports_three_pinc_blocks() {
    let ws = Workspace::new(r#", "model": {"hidden_sizes": [8], "loss": "pinball"}"#);
    ws.train("cfg.json", "q.json");
    let report = ws.json(&[
        "--config",
        "cfg.json",
        "evaluate",
        "--model",
        "q.json",
        "--probabilistic",
    ]);
    let blocks = report["intervals"].as_object().unwrap();
    assert_eq!(blocks.keys().collect::<Vec<_>>(), ["80", "90", "95"]);
    for block in blocks.values() {
        for key in ["picp", "ace", "pinaw", "winkler"] {
            assert!(block[key].is_number());
        }
    }
    assert!(report["qs"].as_f64().unwrap() * 2.0 == report["crps"].as_f64().unwrap());
}

#[test]
fn model_for_other_features_is_rejected() {
    let ws = Workspace::new("");
    ws.train("cfg.json", "model.json");
    let text = std::fs::read_to_string(ws.path("cfg.json"))
        .unwrap()
        .replace(r#", "WD100"]"#, "]");
    std::fs::write(ws.path("three.json"), text).unwrap();
    let out = ws.run(&[
        "--config",
        "three.json",
        "evaluate",
        "--model",
        "model.json",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pfi_names_the_four_nwp_features_and_is_reproducible() {
    let ws = Workspace::new("");
    ws.train("cfg.json", "model.json");
    let args = [
        "--config",
        "cfg.json",
        "explain",
        "--model",
        "model.json",
        "pfi",
        "--svg",
        "pfi.svg",
    ];
    let first = ws.run(&args);
    let second = ws.run(&args);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    let report: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["kind"], "pfi");
    assert_eq!(
        report["feature_names"],
        serde_json::json!(["WS10", "WD10", "WS100", "WD100"])
    );
    assert_eq!(report["values"].as_array().unwrap().len(), 4);
    let svg = std::fs::read_to_string(ws.path("pfi.svg")).unwrap();
    assert_eq!(svg.matches("<rect x=").count(), 4);
}

#[test]
fn lime_report_adds_up_and_checks_the_index() {
    let ws = Workspace::new("");
    ws.train("cfg.json", "model.json");
    let report = ws.json(&[
        "--config",
        "cfg.json",
        "explain",
        "--model",
        "model.json",
        "lime",
        "--instance",
        "3",
    ]);
    let sum: f64 = report["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    let local = report["local_prediction"].as_f64().unwrap();
    assert_eq!(report["intercept"].as_f64().unwrap() + sum, local);

    let out = ws.run(&[
        "--config",
        "cfg.json",
        "explain",
        "--model",
        "model.json",
        "lime",
        "--instance",
        "5000",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_seed_benchmark_is_one_paired_row() {
    let ws = Workspace::new("");
    let report = ws.json(&["--config", "cfg.json", "benchmark", "--seeds", "1"]);
    let seeds = report["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 1);
    for arm in ["with_triopts", "without_triopts"] {
        assert!(seeds[0][arm]["test"]["nrmse"].is_number());
        assert!(seeds[0][arm]["wall_time_s"].is_number());
    }
    assert_eq!(report["split_hash"].as_str().unwrap().len(), 64);
    let (on, off) = (
        report["with_triopts"]["median_nrmse"].as_f64().unwrap(),
        report["without_triopts"]["median_nrmse"].as_f64().unwrap(),
    );
    let delta = report["delta_pct"]["nrmse"].as_f64().unwrap();
    assert!((delta - 100.0 * (off - on) / off).abs() <= 1e-12);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let ws = Workspace::new("");
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = format!("bench{i}.json");
        let args = [
            "--config",
            "cfg.json",
            "--out",
            &out,
            "benchmark",
            "--seeds",
            "3",
            "--workers",
            workers,
            "--omit-timings",
        ];
        assert_eq!(code(&ws.run(&args)), 0);
    }
    assert_eq!(
        std::fs::read(ws.path("bench0.json")).unwrap(),
        std::fs::read(ws.path("bench1.json")).unwrap()
    );

    ws.train("cfg.json", "a.json");
    ws.train("cfg.json", "b.json");
    assert_eq!(
        std::fs::read(ws.path("a.json")).unwrap(),
        std::fs::read(ws.path("b.json")).unwrap()
    );
    let predict = |m: &str| {
        ws.run(&["--config", "cfg.json", "predict", "--model", m])
            .stdout
    };
    assert_eq!(predict("a.json"), predict("b.json"));
}

//! Browser demo: schedule curves, A/B loss curves and explanations, all on
//! synthetic wind data generated in-page. Each export returns a JSON string.

use std::path::PathBuf;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use triopts_core::optim::{self, OptimizerConfig, TriOptsConfig};
use triopts_core::pipeline::{
    self, DataConfig, DataMode, ExplainConfig, ExplainMode, ModelConfig, PreparedData, RunConfig,
    SplitConfig, SplitName, TrainingConfig,
};
use triopts_core::synth::{self, SynthConfig};
use triopts_core::{metrics, svg};

#[derive(Serialize)]
struct Schedule {
    epochs: Vec<usize>,
    cosine: Vec<f64>,
    fixed: f64,
}

pub fn schedule_json(alpha0: f64, total_epochs: usize, fixed_lr: f64) -> Result<String, String> {
    if total_epochs == 0 || total_epochs > 10_000 {
        return Err("total epochs must be between 1 and 10000".into());
    }
    let epochs: Vec<usize> = (0..=total_epochs).collect();
    let cosine = epochs
        .iter()
        .map(|&t| optim::cosine_lr(t, alpha0, total_epochs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&Schedule {
        epochs,
        cosine,
        fixed: fixed_lr,
    })
    .map_err(|e| e.to_string())
}

/// Knobs shared by the training-based operations.
#[derive(Debug, Clone, Copy)]
pub struct DemoSettings {
    pub rows: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub alpha0: f64,
    pub noise_tau: f64,
    pub centralize: bool,
    pub seed: u64,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            rows: 1200,
            epochs: 30,
            hidden: 16,
            alpha0: 0.01,
            noise_tau: 1e-4,
            centralize: true,
            seed: 1,
        }
    }
}

impl DemoSettings {
    fn config(&self) -> RunConfig {
        RunConfig {
            schema_version: 1,
            data: DataConfig {
                path: PathBuf::from("in-memory.csv"),
                timestamp_col: synth::TIMESTAMP_COLUMN.into(),
                target_col: synth::TARGET_COLUMN.into(),
                feature_cols: synth::NWP_COLUMNS.iter().map(|s| s.to_string()).collect(),
                mode: DataMode::Nwp { alignment: 0 },
            },
            model: ModelConfig {
                hidden_sizes: vec![self.hidden],
                ..Default::default()
            },
            optimizer: OptimizerConfig::default(),
            triopts: TriOptsConfig {
                centralize: self.centralize,
                initial_lr: self.alpha0,
                noise_tau: self.noise_tau,
                noise_seed: self.seed,
                ..TriOptsConfig::enabled(self.epochs)
            },
            training: TrainingConfig {
                epochs: self.epochs,
                batch_size: 64,
                early_stop_patience: None,
                seed: self.seed,
            },
            split: SplitConfig::default(),
            explain: ExplainConfig::default(),
        }
    }

    fn prepare(&self, cfg: &RunConfig) -> Result<PreparedData, String> {
        if self.rows < 50 || self.rows > 20_000 {
            return Err("rows must be between 50 and 20000".into());
        }
        if self.epochs == 0 || self.epochs > 500 {
            return Err("epochs must be between 1 and 500".into());
        }
        let frame = synth::generate(&SynthConfig {
            rows: self.rows,
            seed: self.seed,
            ..Default::default()
        });
        pipeline::prepare_frame(frame, cfg).map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct Arm {
    train_loss: Vec<f64>,
    val_loss: Vec<Option<f64>>,
    lr: Vec<f64>,
    test_nrmse: f64,
}

#[derive(Serialize)]
struct Comparison {
    epochs: Vec<usize>,
    with_triopts: Arm,
    without_triopts: Arm,
    nrmse_reduction_pct: f64,
}

/// Trains the TriOpts arm and the plain arm from the same initialization.
pub fn compare_json(s: &DemoSettings) -> Result<String, String> {
    let cfg = s.config();
    let prepared = s.prepare(&cfg)?;
    let arm = |tri: &TriOptsConfig| -> Result<Arm, String> {
        let out = pipeline::train_model(&cfg, &prepared, &cfg.optimizer, tri, s.seed)
            .map_err(|e| e.to_string())?;
        let point = pipeline::point_forecast(&out.params, &out.loss, &prepared.test.x)
            .map_err(|e| e.to_string())?;
        let test_nrmse = metrics::nrmse(&prepared.test.y, &point).map_err(|e| e.to_string())?;
        Ok(Arm {
            train_loss: out.trace.records.iter().map(|r| r.train_loss).collect(),
            val_loss: out.trace.records.iter().map(|r| r.val_loss).collect(),
            lr: out.trace.records.iter().map(|r| r.lr).collect(),
            test_nrmse,
        })
    };
    let on = arm(&cfg.triopts_for_run())?;
    let off = arm(&TriOptsConfig::disabled(s.epochs))?;
    let result = Comparison {
        epochs: (1..=on.train_loss.len()).collect(),
        nrmse_reduction_pct: 100.0 * (off.test_nrmse - on.test_nrmse) / off.test_nrmse,
        with_triopts: on,
        without_triopts: off,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Explained {
    report: triopts_core::explain::ExplanationReport,
    svg: String,
    test_rows: usize,
}

/// Trains the TriOpts model, then explains it with `mode` ("pfi" or "lime").
pub fn explain_json(s: &DemoSettings, mode: &str, instance: usize) -> Result<String, String> {
    let mode = match mode {
        "pfi" => ExplainMode::Pfi,
        "lime" => ExplainMode::Lime,
        other => return Err(format!("unknown mode '{other}', expected pfi or lime")),
    };
    let cfg = s.config();
    let prepared = s.prepare(&cfg)?;
    let (model, _) = pipeline::run_training(&cfg, &prepared).map_err(|e| e.to_string())?;
    let explain_cfg = ExplainConfig {
        split: SplitName::Test,
        ..cfg.explain
    };
    let report = pipeline::explain(
        &model,
        &prepared,
        mode,
        Some(instance),
        &explain_cfg,
        s.seed,
    )
    .map_err(|e| e.to_string())?;
    let (title, axis) = match mode {
        ExplainMode::Pfi => ("Permutation feature importance", "increase in MSE"),
        ExplainMode::Lime => ("LIME contributions", "contribution to forecast"),
    };
    let svg = svg::bar_chart(title, axis, report.feature_names(), report.values());
    serde_json::to_string(&Explained {
        report,
        svg,
        test_rows: prepared.test.len(),
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn schedule(alpha0: f64, total_epochs: usize, fixed_lr: f64) -> Result<String, JsValue> {
    schedule_json(alpha0, total_epochs, fixed_lr).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn compare(
    rows: usize,
    epochs: usize,
    hidden: usize,
    alpha0: f64,
    noise_tau: f64,
    centralize: bool,
    seed: u32,
) -> Result<String, JsValue> {
    let s = DemoSettings {
        rows,
        epochs,
        hidden,
        alpha0,
        noise_tau,
        centralize,
        seed: u64::from(seed),
    };
    compare_json(&s).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn explain(
    rows: usize,
    epochs: usize,
    hidden: usize,
    seed: u32,
    mode: &str,
    instance: usize,
) -> Result<String, JsValue> {
    let s = DemoSettings {
        rows,
        epochs,
        hidden,
        seed: u64::from(seed),
        ..Default::default()
    };
    explain_json(&s, mode, instance).map_err(|e| JsValue::from_str(&e))
}

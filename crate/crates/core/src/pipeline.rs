//! End-to-end runs: configuration, model files, and the operations behind the
//! `train`, `predict`, `evaluate`, `explain` and `benchmark` commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, CsvSchema, Scaler, SupervisedSet, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::explain::{self, ExplanationReport, LimeConfig};
use crate::matrix::Matrix;
use crate::metrics::{self, DeterministicReport, IntervalMetrics};
use crate::network::{
    self, Dense, HiddenActivation, LossKind, MlpParams, OutputActivation, QuantileLevels,
};
use crate::optim::{self, OptimizerConfig, TrainOptions, TrainingTrace, TriOptsConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MODEL_SCHEMA_VERSION: u32 = 1;
/// Interval confidences reported for quantile models.
pub const DEFAULT_PINCS: [f64; 3] = [0.8, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataMode {
    /// Lagged target values predict the value `horizon` steps ahead.
    Lags { lag: usize, horizon: usize },
    /// NWP feature columns at row `i` predict the target at `i + alignment`.
    Nwp {
        #[serde(default)]
        alignment: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub path: PathBuf,
    pub timestamp_col: String,
    pub target_col: String,
    #[serde(default)]
    pub feature_cols: Vec<String>,
    pub mode: DataMode,
}

impl DataConfig {
    fn schema(&self) -> CsvSchema {
        let feature_cols = match self.mode {
            DataMode::Lags { .. } => Vec::new(),
            DataMode::Nwp { .. } => self.feature_cols.clone(),
        };
        CsvSchema {
            timestamp_col: self.timestamp_col.clone(),
            target_col: self.target_col.clone(),
            feature_cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    #[default]
    Mse,
    Pinball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden layer widths; input and output widths follow from the data and loss.
    pub hidden_sizes: Vec<usize>,
    /// Optional full layer list, checked against the data when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_sizes: Option<Vec<usize>>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub loss: LossName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile_levels: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32],
            layer_sizes: None,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
            loss: LossName::Mse,
            quantile_levels: None,
        }
    }
}

impl ModelConfig {
    pub fn loss_kind(&self) -> Result<LossKind> {
        match self.loss {
            LossName::Mse => Ok(LossKind::Mse),
            LossName::Pinball => {
                let levels = match &self.quantile_levels {
                    Some(l) => QuantileLevels::new(l.clone())?,
                    None => QuantileLevels::default_grid(),
                };
                Ok(LossKind::Pinball { levels })
            }
        }
    }

    /// Full layer widths for `n_features` inputs.
    pub fn layer_sizes_for(&self, n_features: usize) -> Result<Vec<usize>> {
        let out = match self.loss_kind()? {
            LossKind::Mse => 1,
            LossKind::Pinball { levels } => levels.len(),
        };
        let mut sizes = vec![n_features];
        sizes.extend(&self.hidden_sizes);
        sizes.push(out);
        if let Some(explicit) = &self.layer_sizes {
            if explicit != &sizes {
                return Err(Error::Schema(format!(
                    "layer_sizes {explicit:?} do not match the data and loss, expected {sizes:?}"
                )));
            }
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// 0 trains full-batch.
    pub batch_size: usize,
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            early_stop_patience: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            early_stop_patience: self.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub repeats: usize,
    pub split: SplitName,
    pub lime: LimeConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            split: SplitName::Test,
            lime: LimeConfig::default(),
        }
    }
}

/// Everything one run needs, read from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub triopts: TriOptsConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
}

impl RunConfig {
    /// Parses a config; a relative data path is resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {}",
                cfg.schema_version
            )));
        }
        if cfg.data.path.is_relative() {
            cfg.data.path = base_dir.join(&cfg.data.path);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    /// Checks the numeric constraints of every section.
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.model.loss_kind()?;
        if self.model.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArchitecture("zero-width hidden layer".into()));
        }
        let tri = self.triopts_for_run();
        tri.validate()?;
        if let DataMode::Nwp { .. } = self.data.mode {
            if self.data.feature_cols.is_empty() {
                return Err(Error::Schema("nwp mode needs feature_cols".into()));
            }
        }
        Ok(())
    }

    /// TriOpts settings with the schedule length tied to the epoch count when
    /// the config leaves it at 0 or shorter than the run.
    pub fn triopts_for_run(&self) -> TriOptsConfig {
        let mut tri = self.triopts;
        if tri.total_epochs < self.training.epochs {
            tri.total_epochs = self.training.epochs;
        }
        tri
    }
}

/// Loaded, normalized and split data for one configuration.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: TimeSeriesFrame,
    pub scaler: Scaler,
    pub set: SupervisedSet,
    pub train: SupervisedSet,
    pub val: SupervisedSet,
    pub test: SupervisedSet,
}

impl PreparedData {
    pub fn split(&self, name: SplitName) -> &SupervisedSet {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.set.feature_names
    }

    /// SHA-256 over the test targets and their source rows.
    pub fn test_split_hash(&self) -> String {
        let mut h = Sha256::new();
        for (y, r) in self.test.y.iter().zip(&self.test.source_rows) {
            h.update(y.to_bits().to_le_bytes());
            h.update((*r as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn prepare_frame(frame: TimeSeriesFrame, cfg: &RunConfig) -> Result<PreparedData> {
    let scaler = Scaler::fit(&frame)?;
    let scaled = scaler.apply(&frame)?;
    let set = match &cfg.data.mode {
        DataMode::Lags { lag, horizon } => {
            data::make_lag_windows(&scaled.target.values, *lag, *horizon)?
        }
        DataMode::Nwp { alignment } => {
            data::make_nwp_set(&scaled, &cfg.data.feature_cols, *alignment)?
        }
    };
    let (train, val, test) =
        data::chronological_split(&set, cfg.split.train, cfg.split.val, cfg.split.test)?;
    Ok(PreparedData {
        frame,
        scaler,
        set,
        train,
        val,
        test,
    })
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData> {
    let frame = data::load_csv(&cfg.data.path, &cfg.data.schema())?;
    prepare_frame(frame, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activations {
    pub hidden: HiddenActivation,
    pub output: OutputActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major `[out × in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// On-disk model: architecture, weights and the scaler needed to feed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Activations,
    pub loss_kind: LossName,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub levels: Option<QuantileLevels>,
    pub layers: Vec<LayerRecord>,
    pub scaler: Scaler,
    pub feature_names: Vec<String>,
    pub target_col: String,
    pub data_mode: DataMode,
}

impl ModelFile {
    pub fn new(
        params: &MlpParams,
        loss: &LossKind,
        prepared: &PreparedData,
        cfg: &RunConfig,
    ) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            layer_sizes: params.layer_sizes(),
            activations: Activations {
                hidden: params.hidden_activation,
                output: params.output_activation,
            },
            loss_kind: match loss {
                LossKind::Mse => LossName::Mse,
                LossKind::Pinball { .. } => LossName::Pinball,
            },
            levels: loss.levels().cloned(),
            layers: params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
            scaler: prepared.scaler.clone(),
            feature_names: prepared.feature_names().to_vec(),
            target_col: cfg.data.target_col.clone(),
            data_mode: cfg.data.mode.clone(),
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        if self.layer_sizes.len() != self.layers.len() + 1 {
            return Err(Error::Schema("layer_sizes and layers disagree".into()));
        }
        let layers = self
            .layer_sizes
            .windows(2)
            .zip(&self.layers)
            .map(|(w, rec)| {
                Ok(Dense {
                    weights: Matrix::from_vec(w[1], w[0], rec.weights.clone())?,
                    bias: rec.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params =
            MlpParams::from_layers(layers, self.activations.hidden, self.activations.output)?;
        if !params.is_finite() {
            return Err(Error::Integrity("model contains non-finite weights".into()));
        }
        Ok(params)
    }

    pub fn loss(&self) -> Result<LossKind> {
        match (self.loss_kind, &self.levels) {
            (LossName::Mse, _) => Ok(LossKind::Mse),
            (LossName::Pinball, Some(levels)) => Ok(LossKind::Pinball {
                levels: levels.clone(),
            }),
            (LossName::Pinball, None) => Err(Error::Schema("pinball model without levels".into())),
        }
    }

    pub fn is_quantile(&self) -> bool {
        self.loss_kind == LossName::Pinball
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model schema_version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fails when the prepared data does not provide the model's inputs.
    pub fn check_compatible(&self, prepared: &PreparedData) -> Result<()> {
        if self.feature_names != prepared.feature_names() {
            return Err(Error::Schema(format!(
                "model expects features {:?}, data provides {:?}",
                self.feature_names,
                prepared.feature_names()
            )));
        }
        Ok(())
    }
}

/// Point forecast used for deterministic scoring and explanations: the
/// single output, or the median of a quantile model.
pub fn point_forecast(params: &MlpParams, loss: &LossKind, x: &Matrix) -> Result<Vec<f64>> {
    match loss {
        LossKind::Mse => Ok(network::predict(params, x)?.column(0)),
        LossKind::Pinball { levels } => {
            let f = network::predict_quantiles(params, x, levels)?;
            match levels.position(0.5) {
                Some(c) => Ok(f.values.column(c)),
                None => Ok(f
                    .values
                    .row_iter()
                    .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                    .collect()),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub trace: TrainingTrace,
    pub loss: LossKind,
}

/// Initializes with `init_seed` and trains on the prepared splits.
pub fn train_model(
    cfg: &RunConfig,
    prepared: &PreparedData,
    opt: &OptimizerConfig,
    tri: &TriOptsConfig,
    init_seed: u64,
) -> Result<TrainOutcome> {
    let loss = cfg.model.loss_kind()?;
    let sizes = cfg.model.layer_sizes_for(prepared.train.n_features())?;
    let params = network::init_mlp(
        &sizes,
        cfg.model.hidden_activation,
        cfg.model.output_activation,
        init_seed,
    )?;
    let (params, trace) = optim::train(
        params,
        &prepared.train,
        &prepared.val,
        opt,
        tri,
        &loss,
        &cfg.training.options(),
    )?;
    Ok(TrainOutcome {
        params,
        trace,
        loss,
    })
}

/// Trains with the configuration as written.
pub fn run_training(
    cfg: &RunConfig,
    prepared: &PreparedData,
) -> Result<(ModelFile, TrainingTrace)> {
    cfg.validate()?;
    let tri = cfg.triopts_for_run();
    let out = train_model(cfg, prepared, &cfg.optimizer, &tri, cfg.training.seed)?;
    Ok((
        ModelFile::new(&out.params, &out.loss, prepared, cfg),
        out.trace,
    ))
}

/// Test-split scores. Deterministic models carry only the first four fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub r2: f64,
    pub nmae: f64,
    pub nrmse: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub crps: Option<f64>,
    /// Interval scores keyed by PINC percentage.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intervals: Option<BTreeMap<String, IntervalMetrics>>,
}

pub fn evaluate(
    model: &ModelFile,
    prepared: &PreparedData,
    probabilistic: bool,
) -> Result<EvaluationReport> {
    model.check_compatible(prepared)?;
    if probabilistic && !model.is_quantile() {
        return Err(Error::Usage(
            "probabilistic evaluation needs a quantile (pinball) model".into(),
        ));
    }
    let params = model.params()?;
    let loss = model.loss()?;
    let test = &prepared.test;
    let point = point_forecast(&params, &loss, &test.x)?;
    let DeterministicReport { r2, nmae, nrmse, n } =
        metrics::deterministic_report(&test.y, &point)?;
    let mut report = EvaluationReport {
        r2,
        nmae,
        nrmse,
        n,
        qs: None,
        crps: None,
        intervals: None,
    };
    if let LossKind::Pinball { levels } = &loss {
        let forecast = network::predict_quantiles(&params, &test.x, levels)?;
        let pincs: Vec<f64> = DEFAULT_PINCS
            .iter()
            .copied()
            .filter(|p| {
                levels.position((1.0 - p) / 2.0).is_some()
                    && levels.position((1.0 + p) / 2.0).is_some()
            })
            .collect();
        let prob = metrics::probabilistic_report(&forecast, &test.y, &pincs)?;
        report.qs = Some(prob.qs);
        report.crps = Some(prob.crps);
        report.intervals = Some(prob.intervals);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainMode {
    Pfi,
    Lime,
}

pub fn explain(
    model: &ModelFile,
    prepared: &PreparedData,
    mode: ExplainMode,
    instance_index: Option<usize>,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<ExplanationReport> {
    model.check_compatible(prepared)?;
    let params = model.params()?;
    let loss = model.loss()?;
    let predict = |x: &Matrix| point_forecast(&params, &loss, x);
    let names = prepared.feature_names();
    match mode {
        ExplainMode::Pfi => {
            let set = prepared.split(cfg.split);
            let r = explain::permutation_importance(
                &predict,
                &set.x,
                &set.y,
                names,
                cfg.repeats,
                seed,
            )?;
            Ok(ExplanationReport::from_pfi(
                &r,
                cfg.split.as_str(),
                set.len(),
            ))
        }
        ExplainMode::Lime => {
            let idx = instance_index.unwrap_or(0);
            let test = &prepared.test;
            if idx >= test.len() {
                return Err(Error::Shape(format!(
                    "instance index {idx} is outside the test split of {} rows",
                    test.len()
                )));
            }
            let lime_cfg = LimeConfig { seed, ..cfg.lime };
            let stats = prepared.train.feature_std();
            let e = explain::fit_lime(&predict, test.x.row(idx), &stats, names, &lime_cfg)?;
            Ok(ExplanationReport::from_lime(&e, idx, lime_cfg))
        }
    }
}

/// Forecasts for one split as CSV, in the target's original units.
pub fn predictions_csv(
    model: &ModelFile,
    prepared: &PreparedData,
    split: SplitName,
) -> Result<String> {
    model.check_compatible(prepared)?;
    let params = model.params()?;
    let loss = model.loss()?;
    let set = prepared.split(split);
    let range = model.scaler.column(&model.target_col)?;
    let mut out = String::from("timestamp,actual");
    let rows: Vec<Vec<f64>> = match &loss {
        LossKind::Mse => {
            out.push_str(",prediction");
            network::predict(&params, &set.x)?
                .column(0)
                .into_iter()
                .map(|v| vec![v])
                .collect()
        }
        LossKind::Pinball { levels } => {
            for q in levels.as_slice() {
                out.push_str(&format!(",q{q}"));
            }
            let f = network::predict_quantiles(&params, &set.x, levels)?;
            f.values.row_iter().map(<[f64]>::to_vec).collect()
        }
    };
    out.push('\n');
    for ((row, &y), &src) in rows.iter().zip(&set.y).zip(&set.source_rows) {
        out.push_str(&data::format_timestamp(&prepared.frame.timestamps[src]));
        out.push_str(&format!(",{}", range.invert(y)));
        for v in row {
            out.push_str(&format!(",{}", range.invert(*v)));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub test: Option<DeterministicReport>,
    pub epochs_run: usize,
    /// First epoch whose validation loss came within 5% of the run's best.
    pub epochs_to_threshold: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub with_triopts: ArmResult,
    pub without_triopts: ArmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub runs: usize,
    pub failures: usize,
    pub median_nrmse: Option<f64>,
    pub median_nmae: Option<f64>,
    pub median_r2: Option<f64>,
    pub median_epochs_to_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub median_wall_time_s: Option<f64>,
}

/// Percentage improvements of the TriOpts arm: `100·(off − on)/off` for the
/// error metrics and `100·(on − off)/|off|` for R².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPct {
    pub nrmse: Option<f64>,
    pub nmae: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub split_hash: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub triopts: TriOptsConfig,
    pub seeds: Vec<SeedResult>,
    pub with_triopts: ArmSummary,
    pub without_triopts: ArmSummary,
    pub delta_pct: DeltaPct,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn run_arm(
    cfg: &RunConfig,
    prepared: &PreparedData,
    opt: &OptimizerConfig,
    tri: &TriOptsConfig,
    seed: u64,
    timed: bool,
) -> ArmResult {
    let start = timed.then(Instant::now);
    let outcome = train_model(cfg, prepared, opt, tri, seed).and_then(|out| {
        let point = point_forecast(&out.params, &out.loss, &prepared.test.x)?;
        let rep = metrics::deterministic_report(&prepared.test.y, &point)?;
        Ok((out.trace, rep))
    });
    let wall_time_s = start.map(|s| s.elapsed().as_secs_f64());
    match outcome {
        Ok((trace, rep)) => ArmResult {
            test: Some(rep),
            epochs_run: trace.len(),
            epochs_to_threshold: trace.epochs_to_threshold(0.05),
            final_train_loss: trace.last().map(|r| r.train_loss),
            final_val_loss: trace.last().and_then(|r| r.val_loss),
            wall_time_s,
            error: None,
        },
        Err(e) => ArmResult {
            test: None,
            epochs_run: 0,
            epochs_to_threshold: None,
            final_train_loss: None,
            final_val_loss: None,
            wall_time_s,
            error: Some(e.to_string()),
        },
    }
}

fn summarize(arms: &[&ArmResult]) -> ArmSummary {
    let ok: Vec<&DeterministicReport> = arms.iter().filter_map(|a| a.test.as_ref()).collect();
    let pick =
        |f: fn(&DeterministicReport) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    let thresholds: Vec<f64> = arms
        .iter()
        .filter_map(|a| a.epochs_to_threshold.map(|e| e as f64))
        .collect();
    let times: Vec<f64> = arms.iter().filter_map(|a| a.wall_time_s).collect();
    ArmSummary {
        runs: arms.len(),
        failures: arms.len() - ok.len(),
        median_nrmse: pick(|r| r.nrmse),
        median_nmae: pick(|r| r.nmae),
        median_r2: pick(|r| r.r2),
        median_epochs_to_threshold: median(&thresholds),
        median_wall_time_s: median(&times),
    }
}

/// Noise stream seed for benchmark seed `seed`.
fn noise_seed_for(base: u64, seed: u64) -> u64 {
    explain::derive_seed(base, seed, 0x7431)
}

/// Paired A/B comparison: every seed trains the configured TriOpts arm and a
/// plain arm at `fixed_lr` from the same initialization on the same splits.
/// With `workers > 1` seeds run on scoped threads; results do not depend on
/// scheduling. `timed = false` omits wall times so the report is reproducible
/// byte for byte.
pub fn run_benchmark(
    cfg: &RunConfig,
    prepared: &PreparedData,
    seeds: &[u64],
    workers: usize,
    timed: bool,
) -> Result<BenchmarkResult> {
    if seeds.is_empty() {
        return Err(Error::Usage("benchmark needs at least one seed".into()));
    }
    cfg.validate()?;
    let tri_on = cfg.triopts_for_run();
    let tri_off = TriOptsConfig::disabled(tri_on.total_epochs);
    let opt = cfg.optimizer;

    let run_seed = |seed: u64| {
        let on = TriOptsConfig {
            noise_seed: noise_seed_for(tri_on.noise_seed, seed),
            ..tri_on
        };
        SeedResult {
            seed,
            with_triopts: run_arm(cfg, prepared, &opt, &on, seed, timed),
            without_triopts: run_arm(cfg, prepared, &opt, &tri_off, seed, timed),
        }
    };

    let results: Vec<SeedResult> = if workers <= 1 {
        seeds.iter().map(|&s| run_seed(s)).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<SeedResult>>> =
            seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(seeds.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= seeds.len() {
                        break;
                    }
                    let r = run_seed(seeds[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every seed ran"))
            .collect()
    };

    let on: Vec<&ArmResult> = results.iter().map(|r| &r.with_triopts).collect();
    let off: Vec<&ArmResult> = results.iter().map(|r| &r.without_triopts).collect();
    let with_triopts = summarize(&on);
    let without_triopts = summarize(&off);
    let pct = |on: Option<f64>, off: Option<f64>| match (on, off) {
        (Some(a), Some(b)) if b != 0.0 => Some(100.0 * (b - a) / b),
        _ => None,
    };
    let delta_pct = DeltaPct {
        nrmse: pct(with_triopts.median_nrmse, without_triopts.median_nrmse),
        nmae: pct(with_triopts.median_nmae, without_triopts.median_nmae),
        r2: match (with_triopts.median_r2, without_triopts.median_r2) {
            (Some(a), Some(b)) if b != 0.0 => Some(100.0 * (a - b) / b.abs()),
            _ => None,
        },
    };
    Ok(BenchmarkResult {
        split_hash: prepared.test_split_hash(),
        n_train: prepared.train.len(),
        n_val: prepared.val.len(),
        n_test: prepared.test.len(),
        epochs: cfg.training.epochs,
        optimizer: opt,
        triopts: tri_on,
        seeds: results,
        with_triopts,
        without_triopts,
        delta_pct,
    })
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use triopts_core::pipeline::{self, ExplainMode, ModelFile, RunConfig, SplitName};
use triopts_core::synth::{self, SynthConfig};
use triopts_core::{svg, Error, Result};

/// Wind power forecasting with TriOpts-enhanced optimizers.
#[derive(Debug, Parser)]
#[command(name = "triopts", version)]
struct Cli {
    /// Run configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; reports go to stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it with its loss trace
    Train {
        /// Trace CSV path [default: <out>.trace.csv]
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write forecasts for one split as CSV
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Score a model on the test split
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Add quantile and interval metrics (quantile models only)
        #[arg(long)]
        probabilistic: bool,
    },
    /// Permutation importance or a LIME explanation
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(value_enum)]
        mode: Mode,
        /// Test-split row to explain (lime)
        #[arg(long)]
        instance: Option<usize>,
        /// Split to permute on (pfi) [default: from config]
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Also write a bar chart
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Paired runs with and without TriOpts
    Benchmark {
        /// Number of seeds, counting up from --seed
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Leave out wall times so reports are reproducible byte for byte
        #[arg(long)]
        omit_timings: bool,
    },
    /// Generate a synthetic wind farm CSV
    Synth {
        #[arg(long, default_value_t = 3000)]
        rows: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::Val => SplitName::Val,
            Split::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Pfi,
    Lime,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    if let Command::Synth { rows } = cli.command {
        let frame = synth::generate(&SynthConfig {
            rows,
            seed: cli.seed.unwrap_or(SynthConfig::default().seed),
            ..Default::default()
        });
        return emit(out, &frame.to_csv(synth::TIMESTAMP_COLUMN));
    }

    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("--config is required".into()))?;
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    let prepared = pipeline::prepare(&cfg)?;

    match cli.command {
        Command::Train { trace } => {
            let model_path = out.map_or_else(|| PathBuf::from("model.json"), Path::to_path_buf);
            let trace_path = trace.unwrap_or_else(|| model_path.with_extension("trace.csv"));
            let (model, trace) = pipeline::run_training(&cfg, &prepared)?;
            write_atomic(&model_path, &model.to_json()?)?;
            write_atomic(&trace_path, &trace.to_csv())?;
            if let Some(last) = trace.last() {
                let val = last
                    .val_loss
                    .map_or("n/a".to_string(), |v| format!("{v:.6e}"));
                println!(
                    "epoch {}: train_loss {:.6e}, val_loss {val}",
                    last.epoch, last.train_loss
                );
            }
            println!("model written to {}", model_path.display());
            Ok(())
        }
        Command::Predict { model, split } => {
            let model = ModelFile::load(model)?;
            emit(
                out,
                &pipeline::predictions_csv(&model, &prepared, split.into())?,
            )
        }
        Command::Evaluate {
            model,
            probabilistic,
        } => {
            let model = ModelFile::load(model)?;
            let report = pipeline::evaluate(&model, &prepared, probabilistic)?;
            emit(out, &to_json(&report)?)
        }
        Command::Explain {
            model,
            mode,
            instance,
            split,
            svg: svg_path,
        } => {
            let model = ModelFile::load(model)?;
            let mut explain_cfg = cfg.explain;
            if let Some(s) = split {
                explain_cfg.split = s.into();
            }
            let mode = match mode {
                Mode::Pfi => ExplainMode::Pfi,
                Mode::Lime => ExplainMode::Lime,
            };
            let report = pipeline::explain(
                &model,
                &prepared,
                mode,
                instance,
                &explain_cfg,
                cfg.training.seed,
            )?;
            if let Some(path) = svg_path {
                let (title, axis) = match mode {
                    ExplainMode::Pfi => ("Permutation feature importance", "increase in MSE"),
                    ExplainMode::Lime => ("LIME contributions", "contribution to forecast"),
                };
                let chart = svg::bar_chart(title, axis, report.feature_names(), report.values());
                write_atomic(&path, &chart)?;
            }
            emit(out, &to_json(&report)?)
        }
        Command::Benchmark {
            seeds,
            workers,
            omit_timings,
        } => {
            let base = cfg.training.seed;
            let seeds: Vec<u64> = (0..seeds as u64).map(|i| base + i).collect();
            let result = pipeline::run_benchmark(&cfg, &prepared, &seeds, workers, !omit_timings)?;
            eprintln!(
                "median test NRMSE: {} with TriOpts, {} without (reduction {})",
                fmt_opt(result.with_triopts.median_nrmse),
                fmt_opt(result.without_triopts.median_nrmse),
                result
                    .delta_pct
                    .nrmse
                    .map_or("n/a".to_string(), |d| format!("{d:+.2}%")),
            );
            emit(out, &to_json(&result)?)
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.5}"))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Writes next to the destination, then renames over it.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(text.as_bytes())?;
            f.sync_all()
        })
        .and_then(|()| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

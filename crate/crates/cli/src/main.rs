use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use moo_ids_core::pipeline::{PipelineConfig, Session, PIPELINE_STAGES};
use moo_ids_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

/// Multi-objective AutoML intrusion-detection pipeline.
#[derive(Debug, Parser)]
#[command(name = "moo-ids", version, args_override_self = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Key-value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Name of the label column.
    #[arg(long, global = true)]
    label: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set cash_iterations=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage from preprocessing to the test report.
    Pipeline,
    /// Split, fit normalization on the training part and balance it.
    Preprocess,
    /// Information-gain importance of each feature.
    ScoreFeatures,
    /// Multi-objective feature selection on stored importances.
    Autofs,
    /// Learner and hyperparameter search on the selected features.
    Cash,
    /// Refit the chosen configuration on the full training part.
    Train,
    /// Score the stored model on the held-out test rows.
    Evaluate,
    /// Score a new CSV with the stored plan, feature mask and model.
    Predict {
        #[arg(long)]
        input: PathBuf,
        /// Predictions CSV (default: <out>/predictions.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn stage_name(&self) -> &'static str {
        match self {
            Command::Pipeline => "pipeline",
            Command::Preprocess => "preprocess",
            Command::ScoreFeatures => "score-features",
            Command::Autofs => "autofs",
            Command::Cash => "cash",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Predict { .. } => "predict",
        }
    }
}

fn build_config(g: &Global) -> Result<PipelineConfig, Error> {
    let mut config = match &g.config {
        Some(path) => PipelineConfig::from_kv_file(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &g.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(p) = &g.data {
        config.dataset = p.clone();
    }
    if let Some(l) = &g.label {
        config.label_column = l.clone();
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(o) = &g.out {
        config.output = o.clone();
    }
    config.validate()?;
    Ok(config)
}

fn print_report(session: &Session) -> Result<()> {
    let path = session.layout().report_dir().join("report.md");
    let table = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = build_config(&cli.global)?;
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    log::info!("config digest {}", config.digest());
    let mut session = Session::new(config)?;
    match &cli.command {
        Command::Pipeline => {
            for stage in PIPELINE_STAGES {
                log::info!("stage {stage}");
                session
                    .run_stage(stage)
                    .with_context(|| format!("stage {stage} failed"))?;
            }
            print_report(&session)?;
        }
        Command::Predict { input, output } => {
            let output = output
                .clone()
                .unwrap_or_else(|| session.layout().root.join("predictions.csv"));
            let summary = session.predict(input, &output).context("stage predict failed")?;
            println!("scored {} rows -> {}", summary.n_rows, output.display());
            if let Some(acc) = summary.accuracy {
                println!("accuracy {acc:.6}");
            }
        }
        other => {
            let stage = other.stage_name();
            session
                .run_stage(stage)
                .with_context(|| format!("stage {stage} failed"))?;
            if stage == "evaluate" {
                print_report(&session)?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(e) if e.is_data_error() => EXIT_DATA,
        _ => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

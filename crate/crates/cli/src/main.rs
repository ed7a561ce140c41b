//! `forecastctl`: runs the forecasting pipeline from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forecastctl::artifacts::Layout;
use forecastctl::stages::{self, Context};
use forecastctl::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "forecastctl", version, about = "Construction cost index forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-section work.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate a panel from the `synthetic` section.
    Generate,
    /// Load and preprocess the panel.
    Ingest,
    /// Build per-section feature matrices and the train/test split.
    Features,
    /// Train the neural models.
    Train,
    /// Walk-forward forecasts for every enabled model.
    Forecast,
    /// Metrics, summary table and Diebold-Mariano comparisons.
    Evaluate,
    /// Descriptive diagnostics of the panel.
    Diagnose,
    /// All stages in order.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Ingest => "ingest",
            Command::Features => "features",
            Command::Train => "train",
            Command::Forecast => "forecast",
            Command::Evaluate => "evaluate",
            Command::Diagnose => "diagnose",
            Command::Run => "run",
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.run_id()));
    let mut ctx = Context::new(cfg, Layout::new(root), cli.command.name())?;
    let statuses = match cli.command {
        Command::Generate => stages::cmd_generate(&mut ctx).map(|_| None)?,
        Command::Ingest => stages::cmd_ingest(&mut ctx, None).map(|_| None)?,
        Command::Features => stages::cmd_features(&mut ctx, None).map(|_| None)?,
        Command::Train => stages::cmd_train(&mut ctx, None).map(|_| None)?,
        Command::Forecast => Some(stages::cmd_forecast(&mut ctx, None, None)?.1),
        Command::Evaluate => stages::cmd_evaluate(&mut ctx, None).map(|_| None)?,
        Command::Diagnose => stages::cmd_diagnose(&mut ctx, None).map(|_| None)?,
        Command::Run => {
            let m = stages::run_pipeline(&mut ctx)?;
            report(&m);
            return Ok(());
        }
    };
    report(&stages::finish(&ctx, statuses)?);
    Ok(())
}

fn report(m: &forecastctl::Manifest) {
    let failed = m.statuses.iter().filter(|s| s.status == forecastctl::pipeline::Status::Failed).count();
    let fallbacks: usize = m.fallback_counts.values().sum();
    println!(
        "{}: run {} ({} sections, {} failed models, {} substituted forecasts)",
        m.command,
        m.run_id,
        m.sections.len(),
        failed,
        fallbacks
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

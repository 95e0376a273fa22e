mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gatewatch", version, about = "Gateway telemetry forecasting, surge detection and intrusion labeling")]
pub struct Cli {
    /// TOML settings file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and clean a flow CSV, roll it up into a series.
    Ingest(IngestArgs),
    /// Seasonality and stationarity diagnostics for a series.
    Inspect(InspectArgs),
    /// Fit a forecaster and write one-step predictions with bands.
    Forecast(ForecastArgs),
    /// Fit several forecasters and rank them on held-out data.
    Compare(CompareArgs),
    /// Per-source surge and dropout alerts for a flow CSV.
    Detect(DetectArgs),
    /// Write a labeled synthetic gateway trace.
    Simulate(SimulateArgs),
    /// Classify an event log with a CC4 network and emit alerts.
    Stream(StreamArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for series.json and ingest_report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub value_col: Option<String>,
    /// Roll-up interval in seconds.
    #[arg(long)]
    pub interval: Option<i64>,
    /// mean, sum or count.
    #[arg(long)]
    pub agg: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Series JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Candidate season length; repeatable.
    #[arg(long)]
    pub period: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// hw, ma, lt, lstm or persistence.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub period: Option<usize>,
    /// Moving-average window.
    #[arg(long)]
    pub window: Option<usize>,
    /// LSTM input window length.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Series JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for forecast.json, forecast.csv and model.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Steps to forecast past the end of the series.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Series JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated model names.
    #[arg(long, default_value = "hw,ma,lt,lstm")]
    pub models: String,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Record wall-clock fit times (makes the report non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Flow CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Alert JSON Lines file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub value_col: Option<String>,
    #[arg(long)]
    pub interval: Option<i64>,
    #[arg(long)]
    pub agg: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// mean_shift or residual.
    #[arg(long)]
    pub mode: Option<String>,
    /// Only flag rises above the band.
    #[arg(long)]
    pub one_sided: bool,
    /// One gateway-wide series instead of one per source.
    #[arg(long)]
    pub gateway: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Output directory for the trace files.
    #[arg(long)]
    pub out: PathBuf,
    /// clean, flood, silence, sybil or mixed.
    #[arg(long, default_value = "flood")]
    pub scenario: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flood rate multiplier.
    #[arg(long)]
    pub magnitude: Option<f64>,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// Event-log JSON Lines.
    #[arg(long)]
    pub input: PathBuf,
    /// Alert JSON Lines file.
    #[arg(long)]
    pub out: PathBuf,
    /// Labeled training records (JSON Lines with a "class" key).
    #[arg(long, required_unless_present = "network", conflicts_with = "network")]
    pub train: Option<PathBuf>,
    /// Previously saved network JSON.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Symbol schema JSON; defaults to the simulator's event schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub interval: Option<i64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Also alert on records classified Unknown.
    #[arg(long)]
    pub strict: bool,
    /// Write the trained network here.
    #[arg(long)]
    pub save_network: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&cfg, a),
        Command::Inspect(a) => commands::inspect(&cfg, a),
        Command::Forecast(a) => commands::forecast(&cfg, a),
        Command::Compare(a) => commands::compare(&cfg, a),
        Command::Detect(a) => commands::detect(&cfg, a),
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Stream(a) => commands::stream(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{err}");
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ivimpute_cli::check::{self, Faults, FAULT_ENV};
use ivimpute_cli::experiment::{self, Preset, SimulateRequest, TableFormat, SEED_ENV};
use ivimpute_cli::input::{self, ColumnSpec};
use ivimpute_cli::report;
use ivimpute_cli::{CliError, CliResult};

/// 2SLS with a regression-imputed endogenous regressor.
#[derive(Debug, Parser)]
#[command(name = "ivimpute", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate β from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// Run built-in diagnostics.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    endogenous: String,
    /// Comma-separated instrument columns.
    #[arg(long, value_delimiter = ',', required = true)]
    instruments: Vec<String>,
    /// Null value for the robust t statistic.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    null: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// paper-fig1 or paper-fig2.
    #[arg(long)]
    preset: Option<String>,
    /// Preset scale: R = 5000·scale, Δp = 0.005/scale.
    #[arg(long, requires = "preset")]
    scale: Option<f64>,
    /// Master seed; overrides IVIMPUTE_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated missing probabilities.
    #[arg(long = "p-grid", value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    /// Replications per grid point.
    #[arg(long)]
    repl: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format; inferred from the --out extension by default.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, clap::Args)]
struct CheckArgs {
    /// Run a single named check.
    #[arg(long)]
    only: Option<String>,
}

fn estimate(args: EstimateArgs) -> CliResult<()> {
    let spec = ColumnSpec {
        outcome: args.outcome,
        endogenous: args.endogenous,
        instruments: args.instruments.into_iter().map(|s| s.trim().to_string()).collect(),
    };
    let data = input::load(&args.data, &spec)?;
    let report = report::estimate(&data.dataset, args.null, args.alpha)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    match args.format {
        ReportFormat::Json => println!("{}", report.to_json()),
        ReportFormat::Text => print!("{}", report.to_text()),
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let req = SimulateRequest {
        config: args.config,
        preset: args.preset.as_deref().map(Preset::parse).transpose()?,
        scale: args.scale,
        seed: args.seed,
        p_grid: args.p_grid,
        repl: args.repl,
        out: args.out,
        format: args.format.map(|f| match f {
            OutputFormat::Csv => TableFormat::Csv,
            OutputFormat::Json => TableFormat::Json,
        }),
        env_seed: std::env::var(SEED_ENV).ok(),
    };
    let run = || -> CliResult<()> {
        for path in experiment::simulate(&req)? {
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    };
    match args.threads {
        None => run(),
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Validation(format!("cannot start {t} threads: {e}")))?
            .install(run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Simulate(args) => simulate(args),
        Command::Check(args) => {
            let faults = Faults::parse(std::env::var(FAULT_ENV).ok().as_deref());
            check::run(args.only.as_deref(), &faults).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

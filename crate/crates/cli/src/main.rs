use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlmc_parareal_cli::{cmd_estimate, cmd_figures, cmd_plan, cmd_sample, load_config, CliError, Overrides};

#[derive(Parser)]
#[command(name = "mlmc-parareal", version, about = "MLMC estimation with Parareal on the finest level")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "MLMCP_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured MC or MLMC estimator.
    Estimate(Common),
    /// Evaluate the cost model and write plan.json and the figure tables.
    Plan(Common),
    /// Solve individual samples on one level.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Level to sample; the finest if omitted.
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Write figure1.csv and figure2.csv only.
    Figures(Common),
}

fn load(c: &Common) -> Result<mlmc_parareal_cli::ExperimentConfig, CliError> {
    let overrides = Overrides {
        out: c.out.clone(),
        seed: c.seed,
        workers: c.workers,
    };
    load_config(c.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(c) => {
            let cfg = load(&c)?;
            let r = cmd_estimate(&cfg)?;
            println!("expectation {} rmse {}", r.expectation, r.rmse_estimate);
        }
        Command::Plan(c) => cmd_plan(&load(&c)?)?,
        Command::Figures(c) => cmd_figures(&load(&c)?)?,
        Command::Sample { common, level, count } => {
            let cfg = load(&common)?;
            let level = level.unwrap_or(cfg.hierarchy.len().saturating_sub(1));
            cmd_sample(&cfg, level, count)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

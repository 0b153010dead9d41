use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitmcmc::experiment::{cmd_predict, cmd_sample, cmd_scaling, cmd_validate, ExperimentConfig, Outcome, RunOptions};
use splitmcmc::Error;

#[derive(Parser)]
#[command(name = "splitmcmc", version, about = "Matrix-splitting MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides "outputs" in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides chain.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Start chains at the origin instead of an exact draw.
    #[arg(long)]
    cold_start: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the identity suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Run only the named check.
        #[arg(long)]
        only: Option<String>,
        /// Perturb every reference value by this relative amount.
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
    /// Write spectral predictions.
    Predict(Common),
    /// Run chains and compare with predictions.
    Sample(Common),
    /// Run a dimension sweep and fit the scaling law.
    Scaling(Common),
}

fn options(c: &Common) -> RunOptions {
    RunOptions {
        out: c.out.clone(),
        seed: c.seed,
        force: c.force,
        cold_start: c.cold_start,
    }
}

fn load(c: &Common) -> Result<ExperimentConfig, Error> {
    let path = c.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    ExperimentConfig::from_path(path)
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Validate { common, only, perturb } => {
            let (outcome, report) = cmd_validate(only.as_deref(), perturb, &options(&common))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(outcome)
        }
        Command::Predict(c) => cmd_predict(&load(&c)?, &options(&c)),
        Command::Sample(c) => cmd_sample(&load(&c)?, &options(&c)),
        Command::Scaling(c) => cmd_scaling(&load(&c)?, &options(&c)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

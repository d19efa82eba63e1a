//! `rcp`: robust conformal prediction intervals, Gamma-value sensitivity
//! analysis, simulation studies and worst-case CDF queries.

mod error;
mod output;
mod pipeline;
mod predict;
mod sensitivity;
mod settings;
mod simulate;
mod worstcase;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "rcp",
    version,
    about = "Robust conformal prediction under confounding"
)]
struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = "RCP_THREADS")]
    threads: Option<usize>,
    /// File of `key = value` settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Predict(predict::PredictArgs),
    Sensitivity(sensitivity::SensitivityArgs),
    Simulate(simulate::SimulateArgs),
    Worstcase(worstcase::WorstcaseArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failure(e.to_string()))?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Predict(a) => predict::run(a, &mut Settings::load("predict", config)?),
        Command::Sensitivity(a) => sensitivity::run(a, &mut Settings::load("sensitivity", config)?),
        Command::Simulate(a) => simulate::run(a, &mut Settings::load("simulate", config)?),
        Command::Worstcase(a) => worstcase::run(a, &mut Settings::load("worstcase", config)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

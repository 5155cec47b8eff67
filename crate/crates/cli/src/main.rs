//! `talescale`: create and move Tales, plan placements, run simulations and
//! drive jobs in a simulated world.
//!
//! Exit codes: 0 success, 1 user error, 2 internal error.

mod job;
mod output;
mod plan;
mod sim;
mod tale;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::{Format, Out};

#[derive(Parser, Debug)]
#[command(name = "talescale", version, about = "Tales on clusters, planned and simulated")]
struct Cli {
    /// Output format of read commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create, export, import and validate Tales.
    #[command(subcommand)]
    Tale(tale::TaleCmd),
    /// Choose an execution model and placement for a workload.
    Plan(plan::PlanArgs),
    /// Run scenarios and measurements on the simulator.
    #[command(subcommand)]
    Sim(sim::SimCmd),
    /// Submit, inspect and cancel jobs in a simulated session.
    #[command(subcommand)]
    Job(job::JobCmd),
}

/// Config path from the flag, else from `TALESCALE_CONFIG`.
#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArg {
    /// Simulation config (JSON).
    #[arg(long, env = "TALESCALE_CONFIG")]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = Out::new(cli.format);
    let result = match cli.command {
        Command::Tale(c) => tale::run(c, &out),
        Command::Plan(a) => plan::run(a, &out),
        Command::Sim(c) => sim::run(c, &out),
        Command::Job(c) => job::run(c, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(out.fail(&e)),
    }
}

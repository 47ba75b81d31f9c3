//! `podhjb`: stage-wise driver for POD/HJB feedback runs.

mod artifacts;
mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use config::RunArgs;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "podhjb", version, about = "Reduced-order HJB feedback synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the snapshot trajectories and write the bundle and POD spectrum.
    Snapshots(RunArgs),
    /// Build the POD basis from the snapshot bundle.
    Basis(RunArgs),
    /// Solve the reduced HJB equation and write value and policy tables.
    Solve(RunArgs),
    /// Run the closed loop and the uncontrolled reference.
    Simulate(RunArgs),
    /// Compare the feedback with the discounted LQR control (test2).
    CompareLqr(RunArgs),
    /// Summarize the artifacts of a run directory.
    Report(RunArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let (args, stage): (&RunArgs, fn(&config::RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Snapshots(a) => (a, commands::snapshots),
        Command::Basis(a) => (a, commands::basis),
        Command::Solve(a) => (a, commands::solve),
        Command::Simulate(a) => (a, commands::simulate),
        Command::CompareLqr(a) => (a, commands::compare_lqr),
        Command::Report(a) => (a, commands::report),
    };
    let rc = args.resolve()?;
    if let Some(n) = rc.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread cap not applied: {e}");
        }
    }
    stage(&rc)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

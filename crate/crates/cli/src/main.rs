use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facetflow_cli::run::{self, Overrides};
use facetflow_cli::CliError;

/// Solvers for the facet-forming flow u_t = u_xx + (alpha/2)(sgn u_x)_x on
/// the unit torus.
///
/// Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 solver
/// failure, 4 I/O error. FACETFLOW_THREADS caps the number of solvers run
/// at once.
#[derive(Parser)]
#[command(name = "facetflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver(s) and write snapshots, facets, events and a report.
    Run(Common),
    /// Run every solver on the same datum and report pairwise distances.
    Compare(Common),
    /// Run the property checks only; exits 1 if any fails.
    Check(Common),
    /// Re-render the SVG plots from the CSV files of an earlier run.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Also write profile.svg and facet_history.svg.
    #[arg(long)]
    plot: bool,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (Command::Run(c) | Command::Compare(c) | Command::Check(c) | Command::Plot(c)) =
        &cli.command;
    let overrides = Overrides {
        out: c.out.clone(),
        seed: c.seed,
    };
    let cfg = overrides.apply(run::load_config(&c.config)?)?;
    match &cli.command {
        Command::Run(c) => run::cmd_run(&cfg, c.plot),
        Command::Compare(c) => run::cmd_compare(&cfg, c.plot),
        Command::Check(_) => run::cmd_check(&cfg),
        Command::Plot(_) => run::cmd_plot(&cfg),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("facetflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

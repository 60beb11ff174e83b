use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fpk_cli::{check, compare, dump, run};

/// Stationary Fokker-Planck densities with optimal-transport collocation refinement.
#[derive(Parser)]
#[command(name = "solver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a potential network and write all run artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for point-wise evaluation (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Fixed-order reductions; requires a seed in the config.
        #[arg(long)]
        deterministic: bool,
        /// Output directory. Overrides FPK_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Side-by-side table of two run records.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate a network snapshot on a grid and print `x..,eta,rho_hat` CSV.
    DumpSolution {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        dx: f64,
        /// Take the domain from a run config.
        #[arg(long, conflicts_with_all = ["lower", "upper"])]
        config: Option<PathBuf>,
        /// Per-axis lower bounds (one value is broadcast).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        upper: Vec<f64>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            threads,
            deterministic,
            out,
        } => run::execute(&run::RunArgs {
            config,
            threads,
            deterministic,
            out,
        }),
        Command::Compare { a, b, csv } => compare::execute(&a, &b, csv.as_deref()),
        Command::DumpSolution {
            net,
            dx,
            config,
            lower,
            upper,
            out,
        } => dump::execute(&net, dx, config.as_deref(), &lower, &upper, out.as_deref()),
        Command::Check => check::execute(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

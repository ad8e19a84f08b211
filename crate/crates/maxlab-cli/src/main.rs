//! Experiment runner over the measure laboratory. Every subcommand reads an
//! optional flat config file, lets flags override it, runs one experiment,
//! and writes `STEM.csv` plus `STEM.report.json`.
//!
//! Exit codes: 0 all asserted properties held, 1 a property failed (the
//! report names it), 2 configuration did not parse, 3 I/O failed, 4 a
//! guard tripped.

mod commands;
mod config;
mod emit;

use clap::{Parser, Subcommand};
use config::FileConfig;
use maxlab::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "maxlab", version, about = "Two-weight maximal-function laboratory")]
struct Cli {
    /// Flat key-value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output stem; default is the subcommand name.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker cap; the MAXLAB_THREADS environment variable does the same.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Route all work through the sequential path.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Joint-density, testing, and norm lower-bound constants of one pair.
    Constants(commands::ConstantsArgs),
    /// Norm lower bound alone, with its extremal integrand.
    Norm(commands::NormArgs),
    /// Whitney decomposition, core sets, maximum principle, stopping cubes.
    Whitney(commands::WhitneyArgs),
    /// Exact bad-offset fraction against brute-force enumeration.
    Badness(commands::BadnessArgs),
    /// Monte Carlo domination by shifted dyadic maximal functions.
    Domination(commands::DominationArgs),
    /// Constants of the smoothed pair against the originals.
    Mollify(commands::MollifyArgs),
    /// Constants over many seeded instances; the max ratio is the headline.
    RatioSweep(commands::RatioSweepArgs),
    /// Grid family cardinality and construction equivalence.
    Gridcheck(commands::GridcheckArgs),
    /// Built-in invariant suite over small instances.
    Selftest(commands::SelftestArgs),
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => 2,
        Error::Io(_) => 3,
        Error::Guard(_) | Error::Resolution(_) | Error::SpecMismatch(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let fc = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    // Worker cap: flag, then environment, then config file.
    let env_cap = match std::env::var("MAXLAB_THREADS") {
        Ok(s) => match s.parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("MAXLAB_THREADS must be a worker count, got {s:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    if let Some(n) = cli.threads.or(env_cap).or(fc.threads) {
        maxlab::exec::cap_workers(n);
    }
    if cli.sequential || fc.sequential.unwrap_or(false) {
        maxlab::exec::force_sequential(true);
    }
    let stem = |name: &str| {
        cli.out
            .clone()
            .or_else(|| fc.out.clone())
            .unwrap_or_else(|| name.into())
    };
    let outcome = match &cli.command {
        Cmd::Constants(a) => commands::constants(&fc, a, stem("constants")),
        Cmd::Norm(a) => commands::norm(&fc, a, stem("norm")),
        Cmd::Whitney(a) => commands::whitney(&fc, a, stem("whitney")),
        Cmd::Badness(a) => commands::badness(&fc, a, stem("badness")),
        Cmd::Domination(a) => commands::domination(&fc, a, stem("domination")),
        Cmd::Mollify(a) => commands::mollify(&fc, a, stem("mollify")),
        Cmd::RatioSweep(a) => commands::ratio_sweep(&fc, a, stem("ratio-sweep")),
        Cmd::Gridcheck(a) => commands::gridcheck(&fc, a, stem("gridcheck")),
        Cmd::Selftest(a) => commands::selftest(&fc, a, stem("selftest")),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

//! `fnslab`: a numerical laboratory around the convolution inequality
//! `h*h <= B |xi|^theta h`, stochastic cascades for the Fourier-space
//! Navier-Stokes equations, a lattice Picard solver and the associated
//! function-space norms.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fnslab", version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = automatic). Estimates do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (default: $FNSLAB_OUT_DIR or ./out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Config overrides, repeatable: --override picard.t_final=0.2
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a kernel: sharp constant, exponents, L1+L2 membership.
    VerifyKernel,
    /// Run the chaining machinery against a candidate kernel.
    NonexistenceTrace,
    /// Monte Carlo estimates of the cascade solution at chosen points.
    CascadeSolve,
    /// Deterministic Picard iteration on a truncated Fourier lattice.
    PicardSolve,
    /// Function-space norms of a stored or preset field.
    Norms,
    /// Depth-truncated cascade expectations against Picard iterates.
    CrossCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = commands::error_category(&err);
            eprintln!(
                "{}",
                serde_json::json!({ "error": category, "message": err.to_string() })
            );
            ExitCode::from(commands::exit_code(&err))
        }
    }
}

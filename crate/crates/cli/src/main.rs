//! `kramers`: leading-order spectra, hierarchies and hitting times of
//! reversible jump processes.
//!
//! Exit codes: 0 success, 1 a check or assumption failed, 2 I/O or parse
//! error.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "kramers", version, about = "Metastable spectra of reversible jump processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Read numbers as exact rationals (`3/10`, `0.25`).
    #[arg(long, global = true)]
    pub rational: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
    Dot,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Exact,
    Triangularize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the spec, the group and the metastability assumptions.
    Validate(InputArgs),
    /// Metastable order with exit exponents and prefactors.
    Hierarchy {
        #[command(flatten)]
        input: InputArgs,
        /// Use the orbit-level process of the spec's group.
        #[arg(long)]
        orbits: bool,
    },
    /// Disconnectivity tree or successor graph as DOT.
    Tree {
        #[command(flatten)]
        input: InputArgs,
        /// Emit the successor graph instead of the tree.
        #[arg(long)]
        successors: bool,
        #[arg(long)]
        orbits: bool,
    },
    /// Leading-order eigenvalue estimates.
    Spectrum {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Append exact eigenvalues and log-deviations.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
        /// Ignore the spec's group.
        #[arg(long)]
        no_symmetry: bool,
    },
    /// Mean first-passage time from a linear solve.
    Mfpt {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        sets: SetArgs,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Mean first-passage time by kinetic Monte Carlo.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        sets: SetArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Jump budget per sample.
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
    },
    /// Spec file of the ring lattice model with its symmetry group.
    LatticeGen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        /// `unit` or `hessian` (experimental).
        #[arg(long, default_value = "unit")]
        prefactors: String,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Allow gamma beyond the default bound.
        #[arg(long)]
        allow_large_gamma: bool,
    },
    /// Spectrum rows over a decreasing list of epsilon values.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated, positive and strictly decreasing.
        #[arg(long, value_delimiter = ',', required = true)]
        sweep: Vec<f64>,
        #[arg(long, value_enum, default_value = "exact")]
        oracle: Oracle,
        #[arg(long)]
        no_symmetry: bool,
    },
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Spec file (JSON, `format: 1`).
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct SetArgs {
    /// Target states by label, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<String>,
    /// Target orbits by representative label or 1-based index.
    #[arg(long, value_delimiter = ',')]
    pub target_orbits: Vec<String>,
    /// Start states, uniform weights.
    #[arg(long, value_delimiter = ',')]
    pub start: Vec<String>,
    /// Start orbits, uniform over their states.
    #[arg(long, value_delimiter = ',')]
    pub start_orbits: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(outcome) => {
            if let Err(f) = commands::emit(&cli, &outcome.text) {
                eprintln!("error: {}", f.message);
                return ExitCode::from(f.code);
            }
            ExitCode::from(outcome.code)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

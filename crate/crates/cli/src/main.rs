//! `nandspin` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Functional simulator of a NAND-SPIN processing-in-MRAM CNN accelerator.
#[derive(Debug, Parser)]
#[command(name = "nandspin", version)]
pub struct Cli {
    /// TOML run configuration (geometry and cost overrides).
    #[arg(long, global = true, env = "NANDSPIN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Model description (JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Input tensor (JSON or binary).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Also write a JSON-lines trace of every micro-op.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Worker threads for inter-subarray parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Seed for the built-in generators (never affects inference).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run inference on the simulated machine.
    Infer,
    /// Run the pure-integer reference pipeline.
    Oracle,
    /// Compare two output tensors; exits 1 on any difference.
    Diff { left: PathBuf, right: PathBuf },
    /// Randomized memory-mode self test of one subarray.
    Memtest {
        /// Row-group writes to perform.
        #[arg(long, default_value_t = 64)]
        rounds: usize,
    },
    /// Write a seeded toy model and input.
    GenToy,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }
}

impl From<nandspin::Error> for Failure {
    fn from(e: nandspin::Error) -> Self {
        use nandspin::Error as E;
        let code = match &e {
            E::Parse(_)
            | E::InvalidModel(_)
            | E::InvalidTensor(_)
            | E::DimMismatch(_)
            | E::StrideInvalid(_)
            | E::DegenerateRange(_)
            | E::UnknownOpKind(_)
            | E::GeometryMismatch(_) => 2,
            E::CapacityExceeded { .. } => 3,
            _ => 4,
        };
        Self::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! `coagsim`: runs the solvers and the supersolution checks from a
//! `key = value` config file and writes data-only artifacts.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coag_core::CoagError;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "coagsim", version, about = "Coagulation with sedimentation: simulation and verification")]
pub struct Cli {
    /// Config file; every key has a default, so it may be omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, created if needed.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Reserved. All schemes are deterministic; the value is only recorded.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the configured solver and write snapshots, diagnostics and a manifest.
    Simulate {
        /// Calibrate the supersolution first and use its horizon.
        #[arg(long)]
        calibrate: bool,
    },
    /// Spatially homogeneous run, optionally swept over truncation volumes.
    Homogeneous {
        /// Comma-separated truncation volumes N.
        #[arg(long = "sweep-N", value_delimiter = ',')]
        sweep_n: Option<Vec<f64>>,
        /// Relative mass loss that marks the onset.
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
    },
    /// Tune R and check the characteristic bounds on random samples.
    VerifyCharacteristics,
    /// Fit the supersolution constants and run the residual, concavity and
    /// x-derivative checks.
    VerifySupersolution,
    /// Merge diagnostics CSVs into one plot-ready CSV.
    Report {
        /// Diagnostics files; defaults to every `diagnostics.csv` under --out.
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Core(CoagError),
    Violations { count: usize, report: PathBuf },
}

impl From<CoagError> for Failure {
    fn from(e: CoagError) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                CoagError::Config { .. } | CoagError::Format(_) | CoagError::Argument(_) | CoagError::Io(_) => 2,
                CoagError::Domain(_)
                | CoagError::Integration { .. }
                | CoagError::Stability { .. }
                | CoagError::Horizon { .. }
                | CoagError::Search(_)
                | CoagError::Iteration(_)
                | CoagError::NonContraction(_) => 3,
            },
            Failure::Violations { .. } => 4,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            Failure::Core(e) => {
                let kind = format!("{e:?}");
                let kind = kind.split(['(', ' ', '{']).next().unwrap_or("").to_string();
                let mut v = json!({ "error": kind, "message": e.to_string(), "exit_code": code });
                if let CoagError::Config { key, .. } = e {
                    v["key"] = json!(key);
                }
                v
            }
            Failure::Violations { count, report } => json!({
                "error": "Violations",
                "message": format!("{count} verification violation(s); see {}", report.display()),
                "violations": count,
                "report": report,
                "exit_code": code,
            }),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use coag_core::config::ParsedConfig;
use coag_core::diagnostics::{decay_envelope_check, mass_above, total_mass, total_number, IterateDiff};
use coag_core::snapshot::write_snapshot;
use coag_core::solver::Solution;
use coag_core::supersolution::SupersolutionParams;
use coag_core::Result;
use serde::Serialize;

pub const DIAGNOSTICS_HEADER: &str = "time,mass,number,overflow,boundary_flux,gel_mass,fitted_C";

/// Fitted constants; `None` when the run did not calibrate.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Constants {
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub kmax: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

impl Constants {
    pub fn from_params(sp: &SupersolutionParams, horizon: f64) -> Self {
        Self {
            k2: Some(sp.k2),
            k3: Some(sp.k3),
            kmax: Some(sp.kmax),
            lambda: Some(sp.lambda),
            l: Some(sp.l),
            r: Some(sp.r),
            t: Some(horizon),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub coag_core: &'static str,
    pub coagsim: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Self { coag_core: coag_core::VERSION, coagsim: env!("CARGO_PKG_VERSION") }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub constants: Constants,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub seed: Option<u64>,
    pub steps: usize,
    pub snapshots: usize,
    pub picard_iterations: usize,
    pub iterate_diffs: Vec<IterateDiff>,
    pub max_ledger_residual: f64,
    pub ledger_drift: f64,
    /// Command-specific results.
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, parsed: &ParsedConfig, threads: usize, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config: parsed.resolved.clone(),
            config_hash: parsed.hash.clone(),
            constants: Constants::default(),
            versions: Versions::default(),
            wall_clock_seconds: 0.0,
            threads,
            seed,
            steps: 0,
            snapshots: 0,
            picard_iterations: 0,
            iterate_diffs: Vec::new(),
            max_ledger_residual: 0.0,
            ledger_drift: 0.0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn record_solution(&mut self, sol: &Solution) {
        self.steps = sol.steps;
        self.snapshots = sol.trajectory.len();
        self.picard_iterations = sol.iterations();
        self.iterate_diffs = sol.iterate_diffs.clone();
        self.max_ledger_residual = sol.max_ledger_residual;
        self.ledger_drift = sol.series.ledger_drift();
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| coag_core::CoagError::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Snapshots, `diagnostics.csv` and `iterations.csv` for one solution.
pub fn write_solution(out: &Path, parsed: &ParsedConfig, sol: &Solution) -> Result<()> {
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for (n, f) in sol.trajectory.iter().enumerate() {
        fs::write(snaps.join(format!("snapshot_{n:05}.csv")), write_snapshot(f, &parsed.hash))?;
    }

    let cfg = &parsed.run;
    let mut csv = String::from(DIAGNOSTICS_HEADER);
    csv.push('\n');
    for f in &sol.trajectory {
        let gel = cfg.gel_cutoff().map_or(0.0, |c| mass_above(f, c));
        let fitted = decay_envelope_check(f, cfg.initial.c0, &cfg.initial).fitted_c;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            f.time,
            total_mass(f),
            total_number(f),
            f.overflow_mass,
            f.boundary_flux,
            gel,
            fitted
        );
    }
    fs::write(out.join("diagnostics.csv"), csv)?;

    let mut it = String::from("iteration,sup_diff,ratio\n");
    for d in &sol.iterate_diffs {
        let _ = writeln!(it, "{},{},{}", d.n, d.sup_diff, d.ratio);
    }
    fs::write(out.join("iterations.csv"), it)?;
    Ok(())
}

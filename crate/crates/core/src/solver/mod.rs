//! Time-evolution drivers.
//!
//! * [`mild`]: Picard iteration in Duhamel form along transport rays.
//! * [`split`]: Strang splitting of transport and coagulation.
//! * [`homogeneous`]: coagulation only, one spatial cell.
//! * [`approx`]: the linear drift model used to build the supersolution.

pub mod approx;
pub mod homogeneous;
pub mod mild;
pub mod split;
pub mod transport;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{IterateDiff, MomentSeries};
use crate::error::{CoagError, Result};
use crate::grid::{GridSpec, InitialData, InitialProfile, StateField};
use crate::kernels::{KernelKind, KernelSpec};

pub use approx::{run_approximate_transport, run_approximate_with_source, ApproxParams};
pub use homogeneous::{gelation_sweep, run_homogeneous, SweepPoint};
pub use mild::{mild_residual, picard_iterate, run_mild_solver, transported_initial};
pub use split::run_operator_split;
pub use transport::transport_step;

/// Horizon accepted by the mild solver when no verified horizon is known.
pub const HEURISTIC_HORIZON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MildPicard,
    OperatorSplit,
    Homogeneous,
    ApproximateTransport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Profile {
    /// `C₀/(1+|x|^m+v^p)` from [`InitialData`].
    Algebraic,
    Exponential { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub kernel: KernelSpec,
    pub initial: InitialData,
    pub profile: Profile,
    pub horizon: f64,
    pub dt: f64,
    pub mode: Mode,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Snapshot spacing; 0 keeps every step.
    pub output_dt: f64,
    /// Horizon certified by the supersolution checks, if they were run.
    pub verified_horizon: Option<f64>,
    /// Drift parameters for the approximate-transport mode.
    pub approx: ApproxParams,
    /// Volume above which grid mass counts as gel; defaults to `N/2` for a
    /// truncated kernel.
    pub gel_volume: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let kernel = KernelSpec::rain(2.0 / 3.0).unwrap();
        let initial = InitialData::new(0.1, 8, 2.0 / 3.0, kernel.gamma).unwrap();
        Self {
            grid: GridSpec::new(-4.0, 6.0, 128, 1e-2, 1e2, 128).expect("valid default grid"),
            kernel,
            initial,
            profile: Profile::Algebraic,
            horizon: 0.05,
            dt: 0.0025,
            mode: Mode::MildPicard,
            picard_tol: 1e-10,
            picard_max_iters: 30,
            output_dt: 0.0,
            verified_horizon: None,
            approx: ApproxParams { l: 1.0, r: 1.0 },
            gel_volume: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(CoagError::config("solver.dt", "dt must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(CoagError::config("solver.T", "horizon must be positive"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(CoagError::config("solver.picard_tol", "tolerance must be positive"));
        }
        if self.picard_max_iters == 0 {
            return Err(CoagError::config("solver.picard_max_iters", "need at least one iteration"));
        }
        if self.mode != Mode::Homogeneous {
            self.grid.validate()?;
        }
        Ok(())
    }

    pub fn initial_profile(&self) -> InitialProfile {
        match self.profile {
            Profile::Algebraic => InitialProfile::Algebraic(self.initial),
            Profile::Exponential { amplitude } => InitialProfile::Exponential { amplitude },
        }
    }

    /// Mass at or beyond this volume counts as gel: `gel_volume` if set,
    /// else half the truncation volume.
    pub fn gel_cutoff(&self) -> Option<f64> {
        if self.gel_volume.is_some() {
            return self.gel_volume;
        }
        match &self.kernel.kind {
            KernelKind::Truncated { n, .. } => Some(0.5 * n),
            _ => None,
        }
    }

    /// Number of equal steps covering the horizon with steps of at most `dt`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Whether step `k` of `steps` should be kept as a snapshot.
    pub(crate) fn keep(&self, k: usize, steps: usize) -> bool {
        if k == 0 || k == steps || self.output_dt <= 0.0 {
            return true;
        }
        let h = self.horizon / steps as f64;
        let every = (self.output_dt / h).round().max(1.0) as usize;
        k % every == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Solution {
    pub trajectory: Vec<StateField>,
    pub iterate_diffs: Vec<IterateDiff>,
    pub series: MomentSeries,
    pub steps: usize,
    /// Largest per-step `|Δ(mass + ledgers)| / (mass + ledgers)(0)`.
    pub max_ledger_residual: f64,
}

impl Solution {
    pub fn last(&self) -> &StateField {
        self.trajectory.last().expect("non-empty trajectory")
    }

    pub fn iterations(&self) -> usize {
        self.iterate_diffs.len()
    }
}

/// `max |a − b| / max |b|` over matching cells.
pub fn relative_sup_diff(a: &StateField, b: &StateField) -> f64 {
    let num = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / b.sup_norm()
}

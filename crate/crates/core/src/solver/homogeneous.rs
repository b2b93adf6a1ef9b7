use super::{RunConfig, Solution};
use crate::coagulation::{build_tables, euler_step, stability_bound};
use serde::Serialize;

use crate::diagnostics::{gelation_detector, MomentSeries};
use crate::error::Result;
use crate::kernels::{truncate_kernel, KernelKind};
use crate::grid::{make_profile, GridSpec, StateField};

/// Space-homogeneous coagulation by explicit Euler. Steps are `cfg.dt`,
/// shortened whenever the positivity bound is tighter, and land exactly on
/// every output time.
pub fn run_homogeneous(cfg: &RunConfig) -> Result<Solution> {
    cfg.validate()?;
    let g = if cfg.grid.nx == 1 {
        cfg.grid
    } else {
        GridSpec::single_column(cfg.grid.v_min, cfg.grid.v_max, cfg.grid.nv)?
    };
    let tables = build_tables(&g, &cfg.kernel);
    let mut f = make_profile(&cfg.initial_profile(), &g);
    let mut series = MomentSeries::new(cfg.gel_cutoff());
    series.record(&f);
    let mut trajectory = vec![f.clone()];
    let out_dt = if cfg.output_dt > 0.0 { cfg.output_dt } else { cfg.dt };
    let mut outputs = 1usize;
    let mut steps = 0;
    let mut residual = 0.0f64;
    let m0 = series.accounted(0);
    while f.time < cfg.horizon * (1.0 - 1e-14) {
        let mut target = (outputs as f64 * out_dt).min(cfg.horizon);
        if cfg.horizon - target <= 1e-12 * cfg.horizon {
            target = cfg.horizon;
        }
        let bound = stability_bound(&f, &tables);
        let dt = cfg.dt.min(bound).min(target - f.time);
        let before = ledger_total(&f, &tables);
        let mut next = euler_step(&f, &tables, dt);
        next.time = if target - f.time <= dt { target } else { f.time + dt };
        residual = residual.max((ledger_total(&next, &tables) - before).abs() / m0);
        f = next;
        steps += 1;
        if f.time >= target {
            series.record(&f);
            trajectory.push(f.clone());
            outputs += 1;
        }
    }
    Ok(Solution {
        trajectory,
        iterate_diffs: Vec::new(),
        series,
        steps,
        max_ledger_residual: residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: f64,
    /// Onset with the gel volume shared by the whole sweep.
    pub onset: Option<f64>,
    /// Onset with the gel volume at `N/2` of this run.
    pub onset_half_n: Option<f64>,
    pub overflow_mass: f64,
    pub steps: usize,
}

/// Runs `cfg` with its kernel truncated at each of `ns`. Unless the config
/// fixes one, the gel volume is the smallest `N/2`, so every run is judged
/// at the same size scale.
pub fn gelation_sweep(cfg: &RunConfig, ns: &[f64], threshold: f64) -> Result<Vec<SweepPoint>> {
    let base = match &cfg.kernel.kind {
        KernelKind::Truncated { inner, .. } => (**inner).clone(),
        _ => cfg.kernel.clone(),
    };
    let smallest = ns.iter().cloned().fold(f64::INFINITY, f64::min);
    let gel = cfg.gel_volume.unwrap_or(0.5 * smallest);
    ns.iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.kernel = truncate_kernel(&base, n)?;
            c.gel_volume = Some(gel);
            let sol = run_homogeneous(&c)?;
            let mut half = MomentSeries::new(Some(0.5 * n));
            for f in &sol.trajectory {
                half.record(f);
            }
            Ok(SweepPoint {
                n,
                onset: gelation_detector(&sol.series, threshold),
                onset_half_n: gelation_detector(&half, threshold),
                overflow_mass: sol.last().overflow_mass,
                steps: sol.steps,
            })
        })
        .collect()
}

fn ledger_total(f: &StateField, tables: &crate::coagulation::CoagTables) -> f64 {
    tables.column_mass(f.column(0)) + f.overflow_mass + f.boundary_flux
}

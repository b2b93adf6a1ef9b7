//! Conserved quantities, envelope fits, gelation onset and contraction rates.

use serde::Serialize;

use crate::error::{CoagError, Result};
use crate::grid::{InitialData, StateField};
use crate::numerics::{linear_fit, pairwise_sum};
use crate::par;

fn cell_sum(f: &StateField, weight: impl Fn(usize) -> f64 + Sync) -> f64 {
    let g = f.grid;
    let dx = if g.nx == 1 { 1.0 } else { g.dx() };
    let w: Vec<f64> = (0..g.nv).map(|k| weight(k) * g.dv(k)).collect();
    let cols = par::map_indexed(g.nx, |i| {
        let col = f.column(i);
        let t: Vec<f64> = col.iter().zip(&w).map(|(a, b)| a * b).collect();
        pairwise_sum(&t)
    });
    pairwise_sum(&cols) * dx
}

/// `Σ v_k f Δv Δx` over all cells.
pub fn total_mass(f: &StateField) -> f64 {
    let vs = f.grid.v_centers();
    cell_sum(f, |k| vs[k])
}

/// `Σ f Δv Δx` over all cells.
pub fn total_number(f: &StateField) -> f64 {
    cell_sum(f, |_| 1.0)
}

/// Mass held in bins whose pivot is at least `cutoff`.
pub fn mass_above(f: &StateField, cutoff: f64) -> f64 {
    let vs = f.grid.v_centers();
    cell_sum(f, |k| if vs[k] >= cutoff { vs[k] } else { 0.0 })
}

/// Per-column `Σ_k v_k^n f Δv_k`.
pub fn moment_profile(f: &StateField, n: f64) -> Vec<f64> {
    (0..f.grid.nx)
        .map(|i| crate::grid::moment(f, n, i, None).value)
        .collect()
}

/// Time series of conserved quantities and ledgers.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub number: Vec<f64>,
    pub overflow: Vec<f64>,
    pub boundary_flux: Vec<f64>,
    /// Grid mass at or above the gel cut-off (zero when there is none).
    pub gel_mass: Vec<f64>,
    pub gel_cutoff: Option<f64>,
    /// First moment per column, when requested.
    pub profiles: Vec<Vec<f64>>,
}

impl MomentSeries {
    pub fn new(gel_cutoff: Option<f64>) -> Self {
        Self { gel_cutoff, ..Default::default() }
    }

    pub fn record(&mut self, f: &StateField) {
        self.times.push(f.time);
        self.mass.push(total_mass(f));
        self.number.push(total_number(f));
        self.overflow.push(f.overflow_mass);
        self.boundary_flux.push(f.boundary_flux);
        self.gel_mass.push(self.gel_cutoff.map_or(0.0, |c| mass_above(f, c)));
    }

    pub fn record_with_profile(&mut self, f: &StateField) {
        self.record(f);
        self.profiles.push(moment_profile(f, 1.0));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `mass + overflow + boundary_flux` at sample `n`.
    pub fn accounted(&self, n: usize) -> f64 {
        self.mass[n] + self.overflow[n] + self.boundary_flux[n]
    }

    /// Largest `|accounted(n) − accounted(0)| / accounted(0)`.
    pub fn ledger_drift(&self) -> f64 {
        let m0 = self.accounted(0);
        (0..self.len())
            .map(|n| ((self.accounted(n) - m0) / m0).abs())
            .fold(0.0, f64::max)
    }

    /// `(mass(0) − sol(t) − ledgers(t)) / mass(0)` where `sol` is the grid
    /// mass below the gel cut-off.
    pub fn relative_loss(&self, n: usize) -> f64 {
        let m0 = self.mass[0] - self.gel_mass[0];
        let sol = self.mass[n] - self.gel_mass[n];
        (m0 - sol - (self.overflow[n] - self.overflow[0]) - (self.boundary_flux[n] - self.boundary_flux[0])) / m0
    }

    /// CSV with columns `time,mass,number,overflow,boundary_flux,gel_mass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mass,number,overflow,boundary_flux,gel_mass\n");
        for n in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.times[n], self.mass[n], self.number[n], self.overflow[n], self.boundary_flux[n], self.gel_mass[n]
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    /// Smallest `C` with `f ≤ C/(1+|x|^m+v^p)` on every cell.
    pub fitted_c: f64,
    /// Cells exceeding the supplied amplitude, as `(x_index, v_index, ratio)`.
    pub exceeding: Vec<(usize, usize, f64)>,
}

pub fn decay_envelope_check(f: &StateField, c: f64, d: &InitialData) -> EnvelopeReport {
    let g = f.grid;
    let vs = g.v_centers();
    let mut fitted: f64 = 0.0;
    let mut exceeding = Vec::new();
    for i in 0..g.nx {
        let x = g.x_center(i);
        let xm = x.abs().powi(d.m as i32);
        for k in 0..g.nv {
            let w = 1.0 + xm + vs[k].powf(d.p);
            let cell = f.get(i, k) * w;
            fitted = fitted.max(cell);
            if cell > c {
                exceeding.push((i, k, cell / c));
            }
        }
    }
    EnvelopeReport { fitted_c: fitted, exceeding }
}

/// First time the relative mass loss exceeds `threshold`, by linear
/// interpolation between samples.
pub fn gelation_detector(series: &MomentSeries, threshold: f64) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let mut prev = series.relative_loss(0);
    if prev > threshold {
        return Some(series.times[0]);
    }
    for n in 1..series.len() {
        let cur = series.relative_loss(n);
        if cur > threshold {
            let (t0, t1) = (series.times[n - 1], series.times[n]);
            let w = ((threshold - prev) / (cur - prev)).clamp(0.0, 1.0);
            return Some(t0 + w * (t1 - t0));
        }
        prev = cur;
    }
    None
}

/// One outer iteration's change `‖f_{n+1} − f_n‖_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateDiff {
    pub n: usize,
    pub sup_diff: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub ratio: f64,
    pub r2: f64,
    pub window: usize,
}

/// Geometric rate from a least-squares fit of `ln sup_diff` against `n`
/// over the last `max(3, ⌈n/2⌉)` iterations.
pub fn contraction_estimator(diffs: &[IterateDiff]) -> Result<ContractionEstimate> {
    if diffs.iter().any(|d| d.sup_diff == 0.0) {
        return Ok(ContractionEstimate { ratio: 0.0, r2: 1.0, window: diffs.len() });
    }
    let finite: Vec<&IterateDiff> = diffs.iter().filter(|d| d.sup_diff.is_finite() && d.sup_diff > 0.0).collect();
    if finite.len() < 3 {
        return Err(CoagError::Argument(format!(
            "contraction estimate needs at least 3 finite differences, got {}",
            finite.len()
        )));
    }
    let window = 3usize.max(finite.len().div_ceil(2));
    let tail = &finite[finite.len() - window..];
    let xs: Vec<f64> = tail.iter().map(|d| d.n as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|d| d.sup_diff.ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok(ContractionEstimate { ratio: slope.exp(), r2, window })
}

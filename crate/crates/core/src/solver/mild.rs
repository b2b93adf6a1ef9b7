//! Picard iteration for the mild formulation.
//!
//! Iterate `n+1` solves the equation that is linear in `f_{n+1}`:
//! along each ray `x − v^α(t−s)` the loss rate `a[f_n]` gives the survival
//! factor and the gain is the bilinear form `Q(f_{n+1}, f_n)`. Slabs are
//! advanced in time; within a slab the gain at the new time is lagged in a
//! short fixed point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RunConfig, Solution, HEURISTIC_HORIZON};
use crate::coagulation::{build_tables, CoagTables};
use crate::diagnostics::{IterateDiff, MomentSeries};
use crate::error::{CoagError, Result};
use crate::grid::{bracket, GridSpec, InitialProfile, StateField};
use crate::par;

const INNER_SWEEPS: usize = 50;

/// Values of a trajectory slab at the ray position `xi` for bin `k`, with
/// the edge value held outside the domain.
#[inline]
fn along_x(field: &[f64], g: &GridSpec, xi: f64, k: usize) -> f64 {
    let (i0, i1, w) = bracket((xi - g.x_min) / g.dx() - 0.5, g.nx);
    let a = field[i0 * g.nv + k];
    if w == 0.0 {
        a
    } else {
        a + w * (field[i1 * g.nv + k] - a)
    }
}

fn loss_field(f: &[f64], g: &GridSpec, tables: &CoagTables) -> Vec<f64> {
    let nv = g.nv;
    par::map_indexed(g.nx, |i| tables.loss_rates(&f[i * nv..(i + 1) * nv]))
        .into_iter()
        .flatten()
        .collect()
}

/// Gain field `Q(f, h)` and its overflow mass rate (per unit length).
fn gain_field(f: &[f64], h: &[f64], g: &GridSpec, tables: &CoagTables) -> (Vec<f64>, f64) {
    let nv = g.nv;
    let cols = par::map_indexed(g.nx, |i| {
        let mut out = vec![0.0; nv];
        let ov = tables.gain_bilinear(&f[i * nv..(i + 1) * nv], &h[i * nv..(i + 1) * nv], &mut out);
        (out, ov)
    });
    let mut gain = Vec::with_capacity(f.len());
    let mut ov = 0.0;
    for (c, o) in cols {
        gain.extend_from_slice(&c);
        ov += o;
    }
    (gain, ov * g.dx())
}

/// Mass rate through `x_max` minus the rate through `x_min`.
fn boundary_rate(f: &[f64], g: &GridSpec, alpha: f64) -> f64 {
    let nv = g.nv;
    let last = (g.nx - 1) * nv;
    (0..nv)
        .map(|k| {
            let v = g.v_center(k);
            v.powf(alpha) * v * g.dv(k) * (f[last + k] - f[k])
        })
        .sum()
}

/// Parts of the Duhamel sum known before slab `k` is solved: the
/// transported initial datum and the gain at earlier slabs, each weighted
/// by its survival factor.
fn known_part(
    profile: &InitialProfile,
    g: &GridSpec,
    times: &[f64],
    a_prev: &[Vec<f64>],
    gains: &[Vec<f64>],
    k: usize,
    alpha: f64,
) -> Vec<f64> {
    let nv = g.nv;
    let xs = g.x_centers();
    let vs = g.v_centers();
    let cols = par::map_indexed(g.nx, |i| {
        let mut col = vec![0.0; nv];
        let mut a_ray = vec![0.0; k + 1];
        for b in 0..nv {
            let c = vs[b].powf(alpha);
            for (j, slot) in a_ray.iter_mut().enumerate() {
                *slot = along_x(&a_prev[j], g, xs[i] - c * (times[k] - times[j]), b);
            }
            // Survival from t_j to t_k by the trapezoid rule, accumulated backwards.
            let mut integral = 0.0;
            let mut acc = 0.0;
            for j in (0..k).rev() {
                let h = times[j + 1] - times[j];
                integral += 0.5 * h * (a_ray[j] + a_ray[j + 1]);
                let s = (-integral).exp();
                let w = if j == 0 { 0.5 * (times[1] - times[0]) } else { 0.5 * (times[j + 1] - times[j - 1]) };
                let q = along_x(&gains[j], g, xs[i] - c * (times[k] - times[j]), b);
                acc += w * s * q;
                if j == 0 {
                    let xi0 = xs[i] - c * (times[k] - times[0]);
                    acc += profile.eval(xi0, vs[b]) * s;
                }
            }
            if k == 0 {
                acc = profile.eval(xs[i], vs[b]);
            }
            col[b] = acc;
        }
        col
    });
    cols.into_iter().flatten().collect()
}

/// Slab times of a trajectory.
fn slab_times(traj: &[StateField]) -> Vec<f64> {
    traj.iter().map(|f| f.time).collect()
}

/// One Picard step: the trajectory of `f_{n+1}` given that of `f_n`.
pub fn picard_iterate(prev: &[StateField], profile: &InitialProfile, cfg: &RunConfig) -> Result<Vec<StateField>> {
    let tables = build_tables(&prev[0].grid, &cfg.kernel);
    iterate_with(prev, profile, cfg, &tables)
}

fn iterate_with(
    prev: &[StateField],
    profile: &InitialProfile,
    cfg: &RunConfig,
    tables: &CoagTables,
) -> Result<Vec<StateField>> {
    let g = prev[0].grid;
    let alpha = cfg.initial.alpha;
    let times = slab_times(prev);
    let a_prev: Vec<Vec<f64>> = prev.iter().map(|f| loss_field(&f.values, &g, tables)).collect();
    let mut gains: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    let mut out: Vec<StateField> = Vec::with_capacity(times.len());
    let mut overflow_rates = Vec::with_capacity(times.len());
    let inner_tol = |sup: f64| (cfg.picard_tol / 10.0).max(1e-14 * sup);
    for k in 0..times.len() {
        let base = known_part(profile, &g, &times, &a_prev, &gains, k, alpha);
        let half = if k == 0 { 0.0 } else { 0.5 * (times[k] - times[k - 1]) };
        let mut guess = prev[k].values.clone();
        let mut converged = false;
        let mut last_change = f64::INFINITY;
        for _ in 0..INNER_SWEEPS {
            let (q, _) = gain_field(&guess, &prev[k].values, &g, tables);
            let next: Vec<f64> = base.iter().zip(&q).map(|(b, q)| b + half * q).collect();
            let change = next.iter().zip(&guess).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let sup = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            guess = next;
            last_change = change;
            if change <= inner_tol(sup) || half == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(CoagError::Iteration(format!(
                "inner fixed point at t = {} did not settle in {INNER_SWEEPS} sweeps (last change {last_change:e})",
                times[k]
            )));
        }
        // The gain stored for later slabs belongs to the settled value.
        let (gain, ov) = gain_field(&guess, &prev[k].values, &g, tables);
        overflow_rates.push(ov);
        gains.push(gain);
        out.push(StateField {
            grid: g,
            values: guess,
            time: times[k],
            overflow_mass: 0.0,
            boundary_flux: 0.0,
        });
    }
    attach_ledgers(&mut out, &overflow_rates, alpha);
    Ok(out)
}

/// Trapezoid integrals of the overflow and boundary mass rates.
fn attach_ledgers(traj: &mut [StateField], overflow_rates: &[f64], alpha: f64) {
    let g = traj[0].grid;
    let b: Vec<f64> = traj.iter().map(|f| boundary_rate(&f.values, &g, alpha)).collect();
    let (mut ov, mut bf) = (0.0, 0.0);
    for k in 1..traj.len() {
        let h = traj[k].time - traj[k - 1].time;
        ov += 0.5 * h * (overflow_rates[k] + overflow_rates[k - 1]);
        bf += 0.5 * h * (b[k] + b[k - 1]);
        traj[k].overflow_mass = ov;
        traj[k].boundary_flux = bf;
    }
}

/// Pure transport of the initial datum, evaluated at every slab.
pub fn transported_initial(profile: &InitialProfile, g: &GridSpec, times: &[f64], alpha: f64) -> Vec<StateField> {
    times
        .iter()
        .map(|&t| {
            let mut f = StateField::from_fn(*g, |x, v| profile.eval(x - v.powf(alpha) * (t - times[0]), v));
            f.time = t;
            f
        })
        .collect()
}

fn check_horizon(cfg: &RunConfig) -> Result<()> {
    let t_max = cfg.verified_horizon.unwrap_or(HEURISTIC_HORIZON);
    if cfg.horizon > t_max * (1.0 + 1e-12) {
        return Err(CoagError::Horizon { t: cfg.horizon, t_max });
    }
    Ok(())
}

fn sup_diff(a: &[StateField], b: &[StateField]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.values.iter().zip(&y.values))
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

/// Iterates [`picard_iterate`] from the transported datum until the sup
/// change drops below `picard_tol` or `picard_max_iters` is reached.
pub fn run_mild_solver(cfg: &RunConfig) -> Result<Solution> {
    cfg.validate()?;
    check_horizon(cfg)?;
    let g = cfg.grid;
    let steps = cfg.steps();
    let h = cfg.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| if k == steps { cfg.horizon } else { k as f64 * h }).collect();
    let profile = cfg.initial_profile();
    let tables = build_tables(&g, &cfg.kernel);
    let mut traj = transported_initial(&profile, &g, &times, cfg.initial.alpha);
    let mut diffs: Vec<IterateDiff> = Vec::new();
    let mut rising = 0;
    for n in 1..=cfg.picard_max_iters {
        let next = iterate_with(&traj, &profile, cfg, &tables)?;
        let d = sup_diff(&next, &traj);
        let ratio = diffs.last().map_or(f64::NAN, |p| if p.sup_diff > 0.0 { d / p.sup_diff } else { 0.0 });
        diffs.push(IterateDiff { n, sup_diff: d, ratio });
        traj = next;
        if d < cfg.picard_tol {
            break;
        }
        rising = if ratio >= 1.0 { rising + 1 } else { 0 };
        if rising >= 3 {
            return Err(CoagError::NonContraction(format!(
                "iterate differences grew for 3 consecutive iterations (last ratio {ratio:.3}); reduce T below {}",
                cfg.horizon
            )));
        }
    }
    let mut series = MomentSeries::new(cfg.gel_cutoff());
    for f in &traj {
        series.record(f);
    }
    let m0 = series.accounted(0);
    let residual = (1..series.len())
        .map(|n| (series.accounted(n) - series.accounted(n - 1)).abs() / m0)
        .fold(0.0, f64::max);
    let trajectory = traj
        .into_iter()
        .enumerate()
        .filter(|(k, _)| cfg.keep(*k, steps))
        .map(|(_, f)| f)
        .collect();
    Ok(Solution { trajectory, iterate_diffs: diffs, series, steps, max_ledger_residual: residual })
}

/// Largest residual of the discrete mild equation at `samples` random
/// nodes, with `f_n = f_{n+1} = traj`. The trajectory must contain every slab.
pub fn mild_residual(traj: &[StateField], cfg: &RunConfig, samples: usize, seed: u64) -> Result<f64> {
    let g = traj[0].grid;
    let tables = build_tables(&g, &cfg.kernel);
    let profile = cfg.initial_profile();
    let times = slab_times(traj);
    let a: Vec<Vec<f64>> = traj.iter().map(|f| loss_field(&f.values, &g, &tables)).collect();
    let gains: Vec<Vec<f64>> = traj.iter().map(|f| gain_field(&f.values, &f.values, &g, &tables).0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let xs = g.x_centers();
    let vs = g.v_centers();
    for _ in 0..samples {
        let i = rng.random_range(0..g.nx);
        let b = rng.random_range(0..g.nv);
        let k = rng.random_range(0..times.len());
        let c = vs[b].powf(cfg.initial.alpha);
        // Independent evaluation of the Duhamel sum at one node.
        let ray = |j: usize| xs[i] - c * (times[k] - times[j]);
        let mut rhs = 0.0;
        for j in 0..=k {
            let mut integral = 0.0;
            for l in j..k {
                integral += 0.5 * (times[l + 1] - times[l]) * (along_x(&a[l], &g, ray(l), b) + along_x(&a[l + 1], &g, ray(l + 1), b));
            }
            let s = (-integral).exp();
            if k > 0 {
                let lo = if j == 0 { times[0] } else { times[j - 1] };
                let hi = if j == k { times[k] } else { times[j + 1] };
                rhs += 0.5 * (hi - lo) * s * along_x(&gains[j], &g, ray(j), b);
            }
            if j == 0 {
                rhs += s * profile.eval(ray(0), vs[b]);
            }
        }
        worst = worst.max((traj[k].get(i, b) - rhs).abs());
    }
    Ok(worst)
}

use serde::{Deserialize, Serialize};

use super::transport::transport_step;
use super::{RunConfig, Solution};
use crate::characteristics::CharParams;
use crate::diagnostics::MomentSeries;
use crate::error::{CoagError, Result};
use crate::grid::{make_profile, StateField};

/// Drift strength `L` and cut-in volume `R` of the linear drift model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    pub l: f64,
    pub r: f64,
}

/// `∂ₜf + v^α∂ₓf + L v^γ ξ_R(v) ∂ᵥf / (1+|x|^q) = 0`.
pub fn run_approximate_transport(cfg: &RunConfig) -> Result<Solution> {
    run_approximate_with_source(cfg, None)
}

/// As [`run_approximate_transport`] with a source `S(x, v, t)` on the right.
/// Each step shifts in x, then applies first-order upwinding in v and the
/// source at the start-of-step time.
pub fn run_approximate_with_source(
    cfg: &RunConfig,
    source: Option<&(dyn Fn(f64, f64, f64) -> f64 + Sync)>,
) -> Result<Solution> {
    cfg.validate()?;
    let g = cfg.grid;
    let alpha = cfg.initial.alpha;
    let p = CharParams::new(cfg.approx.l, cfg.approx.r, alpha, cfg.kernel.gamma, cfg.initial.m)?;
    let q = p.q();
    let vs = g.v_centers();
    let xs = g.x_centers();
    // Drift per bin without the spatial factor.
    let drift: Vec<f64> = vs.iter().map(|&v| p.l * v.powf(p.gamma) * p.xi(v).0).collect();
    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let mut cfl = 0.0f64;
    for k in 1..g.nv {
        cfl = cfl.max(drift[k] / (vs[k] - vs[k - 1]));
    }
    if drift[0] > 0.0 {
        cfl = cfl.max(drift[0] / (vs[1] - vs[0]));
    }
    if dt * cfl > 1.0 {
        return Err(CoagError::Stability { dt, bound: 1.0 / cfl });
    }
    let mut f = make_profile(&cfg.initial_profile(), &g);
    let mut series = MomentSeries::new(None);
    series.record(&f);
    let mut trajectory = vec![f.clone()];
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        let src = source.map(|s| StateField::from_fn(g, |x, v| s(x, v, t0)));
        let mut next = transport_step(&f, alpha, dt);
        if p.l != 0.0 {
            let shifted = next.values.clone();
            for (i, &x) in xs.iter().enumerate() {
                let damp = 1.0 / (1.0 + x.abs().powi(q));
                let col = &shifted[i * g.nv..(i + 1) * g.nv];
                for k in 0..g.nv {
                    let b = drift[k] * damp;
                    if b == 0.0 {
                        continue;
                    }
                    // Zero-gradient inflow below the first bin.
                    let slope = if k == 0 { 0.0 } else { (col[k] - col[k - 1]) / (vs[k] - vs[k - 1]) };
                    next.values[i * g.nv + k] -= dt * b * slope;
                }
            }
        }
        if let Some(s) = &src {
            for (v, sv) in next.values.iter_mut().zip(&s.values) {
                *v += dt * sv;
            }
        }
        next.time = if step == steps { cfg.horizon } else { step as f64 * dt };
        f = next;
        series.record(&f);
        if cfg.keep(step, steps) {
            trajectory.push(f.clone());
        }
    }
    Ok(Solution { trajectory, iterate_diffs: Vec::new(), series, steps, max_ledger_residual: 0.0 })
}

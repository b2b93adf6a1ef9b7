//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Arrays cross the boundary as flat `Float64Array`s; each function
//! documents its stride.

use coag_core::characteristics::integrate_traced;
use coag_core::diagnostics::{total_mass, total_number};
use coag_core::grid::GridSpec;
use coag_core::kernels::KernelSpec;
use coag_core::solver::{run_homogeneous, Mode, Profile, RunConfig};
use coag_core::supersolution::{calibrate, eval_gl, eval_h, find_vmax, Calibration, CalibrationSpec};
use coag_core::{CoagError, InitialData};
use wasm_bindgen::prelude::*;

fn js_err(e: CoagError) -> JsError {
    JsError::new(&e.to_string())
}

/// Homogeneous run from `amplitude·e^{-v}` on 128 geometric bins over
/// `[1e-3, 1e3]`. `kernel` is `constant`, `additive` or `sum:<gamma>`.
/// Returns `(t, M0, M1)` triples at `frames` equally spaced times.
#[wasm_bindgen]
pub fn homogeneous_decay(kernel: &str, amplitude: f64, t_end: f64, frames: usize) -> Result<Vec<f64>, JsError> {
    let k = match kernel {
        "constant" => KernelSpec::constant(1.0),
        "additive" => KernelSpec::sum(1.0),
        s => match s.strip_prefix("sum:").and_then(|g| g.parse().ok()) {
            Some(g) => KernelSpec::sum(g),
            None => return Err(JsError::new(&format!("unknown kernel `{kernel}`"))),
        },
    }
    .map_err(js_err)?;
    let frames = frames.max(1);
    let cfg = RunConfig {
        grid: GridSpec::single_column(1e-3, 1e3, 128).map_err(js_err)?,
        kernel: k,
        profile: Profile::Exponential { amplitude },
        mode: Mode::Homogeneous,
        horizon: t_end,
        dt: (t_end / frames as f64).min(1e-2),
        output_dt: t_end / frames as f64,
        ..RunConfig::default()
    };
    let sol = run_homogeneous(&cfg).map_err(js_err)?;
    Ok(sol.trajectory.iter().flat_map(|f| [f.time, total_number(f), total_mass(f)]).collect())
}

/// Desk-case supersolution: rain kernel with `α = 2/3`, `m = 8`,
/// `C₀ = 0.1`, calibrated once on construction.
#[wasm_bindgen]
pub struct Majorant {
    cal: Calibration,
}

#[wasm_bindgen]
impl Majorant {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Majorant, JsError> {
        let k = KernelSpec::rain(2.0 / 3.0).map_err(js_err)?;
        let d = InitialData::new(0.1, 8, 2.0 / 3.0, k.gamma).map_err(js_err)?;
        let g = GridSpec::new(-4.0, 6.0, 128, 1e-2, 1e2, 128).map_err(js_err)?;
        let cal = calibrate(&d, &k, &g, &CalibrationSpec::default()).map_err(js_err)?;
        Ok(Majorant { cal })
    }

    /// Verified horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.cal.horizon
    }

    /// `[K2, K3, Kmax, lambda, L, R]`.
    pub fn constants(&self) -> Vec<f64> {
        let p = &self.cal.params;
        vec![p.k2, p.k3, p.kmax, p.lambda, p.l, p.r]
    }

    /// `(v, G_L, H)` triples at `n` log-spaced volumes in `[v_lo, v_hi]`.
    pub fn profile(&self, x: f64, t: f64, v_lo: f64, v_hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
        let sp = &self.cal.params;
        let n = n.max(2);
        let mut out = Vec::with_capacity(3 * n);
        for j in 0..n {
            let v = v_lo * (v_hi / v_lo).powf(j as f64 / (n - 1) as f64);
            out.extend([v, eval_gl(x, v, t, sp).map_err(js_err)?, eval_h(x, v, t, sp).map_err(js_err)?]);
        }
        Ok(out)
    }

    /// Maximiser of `v ↦ G_L(x, v, t)`, or `NaN` when there is none.
    pub fn vmax(&self, x: f64, t: f64) -> Result<f64, JsError> {
        Ok(find_vmax(x, t, &self.cal.params).map_err(js_err)?.unwrap_or(f64::NAN))
    }

    /// Backward characteristic from `(x, v)` over time `t`, as `(s, x, v)`
    /// triples at every accepted step.
    pub fn path(&self, x: f64, v: f64, t: f64) -> Result<Vec<f64>, JsError> {
        let mut out = vec![0.0, x, v];
        integrate_traced(x, v, t, &self.cal.params.char_params(), 1e-9, |c| out.extend([c.t, c.x, c.v]))
            .map_err(js_err)?;
        Ok(out)
    }
}

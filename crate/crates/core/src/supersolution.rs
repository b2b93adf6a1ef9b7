//! The supersolution `G = B_t H` and the numerical checks behind it.
//!
//! `G_L` is the initial datum carried back along the drifted
//! characteristics, `H` caps `G_L` at its maximum in `v` away from the
//! critical strip, and `B_t = exp(λt + λt^{c_α})` absorbs the coagulation
//! terms. The constants `K₂`, `K₃` and `K_max` are fitted on sample sweeps.

use serde::Serialize;

use crate::characteristics::{auto_tune_r, char_samples, integrate_characteristics, CharParams, CharSample, TuneReport};
use crate::error::{CoagError, Result};
use crate::grid::{GridSpec, InitialData};
use crate::kernels::KernelSpec;
use crate::numerics::quad::integrate_log;
use crate::numerics::{linear_fit, logspace};
use crate::par;

const CHAR_TOL: f64 = 1e-10;
const STRIP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupersolutionParams {
    pub c0: f64,
    pub m: u32,
    pub p: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub l: f64,
    pub r: f64,
    pub lambda: f64,
    pub c_alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub kmax: f64,
}

impl SupersolutionParams {
    /// Unit constants, no drift and `λ = 1`; callers fit the rest.
    pub fn new(data: &InitialData, kernel: &KernelSpec, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.25) {
            return Err(CoagError::config("supersolution.delta", "delta must lie in (0, 1/4]"));
        }
        let c_alpha = (data.alpha + 1.0 - kernel.gamma) / data.alpha;
        if !(c_alpha > 0.0) {
            return Err(CoagError::config("kernel.gamma", "requires gamma < 1 + alpha"));
        }
        Ok(Self {
            c0: data.c0,
            m: data.m,
            p: data.p,
            alpha: data.alpha,
            gamma: kernel.gamma,
            delta,
            l: 0.0,
            r: 1.0,
            lambda: 1.0,
            c_alpha,
            k1: kernel.k1,
            k2: 1.0,
            k3: 1.0,
            kmax: 1.0,
        })
    }

    pub fn char_params(&self) -> CharParams {
        CharParams { l: self.l, r: self.r, alpha: self.alpha, gamma: self.gamma, m: self.m, d: crate::characteristics::d_exponent(self.alpha) }
    }

    /// `L = 4 K₁ K₂ K₃ C₀`.
    pub fn drift_strength(&self) -> f64 {
        4.0 * self.k1 * self.k2 * self.k3 * self.c0
    }

    pub fn b(&self, t: f64) -> f64 {
        (self.lambda * t + self.lambda * t.powf(self.c_alpha)).exp()
    }

    pub fn b_prime(&self, t: f64) -> f64 {
        self.lambda * (1.0 + self.c_alpha * t.powf(self.c_alpha - 1.0)) * self.b(t)
    }

    /// Largest `T` with `max{T, T^{c_α}} ≤ ln 2 / (2λ)`, so that `B_t ≤ 2`.
    pub fn horizon(&self) -> f64 {
        let h = std::f64::consts::LN_2 / (2.0 * self.lambda);
        h.min(h.powf(1.0 / self.c_alpha))
    }

    #[inline]
    fn profile(&self, x: f64, v: f64) -> f64 {
        self.c0 / (1.0 + x.abs().powi(self.m as i32) + v.powf(self.p))
    }

    fn in_strip(&self, x: f64, v: f64, t: f64) -> bool {
        let s = v.powf(self.alpha) * t;
        x >= (1.0 - 2.0 * self.delta) * s * (1.0 - STRIP_SLACK) && x <= (1.0 + 2.0 * self.delta) * s * (1.0 + STRIP_SLACK)
    }
}

/// `G_L` and `∂ᵥG_L` from the characteristic and its variational state.
pub fn gl_with_dv(x: f64, v: f64, t: f64, sp: &SupersolutionParams) -> Result<(f64, f64)> {
    let c = integrate_characteristics(x, v, t, &sp.char_params(), CHAR_TOL)?;
    let m = sp.m as i32;
    let den = 1.0 + c.x.abs().powi(m) + c.v.powf(sp.p);
    let dden = m as f64 * c.x.powi(m - 1) * c.dvx + sp.p * c.v.powf(sp.p - 1.0) * c.dvv;
    Ok((sp.c0 / den, -sp.c0 * dden / (den * den)))
}

pub fn eval_gl(x: f64, v: f64, t: f64, sp: &SupersolutionParams) -> Result<f64> {
    Ok(gl_with_dv(x, v, t, sp)?.0)
}

/// Maximiser of `G_L(x, ·, t)` for `x > 0`, by bisection on the sign of
/// `∂ᵥG_L` over the bracket `(xτ)^{1/α}/K_max · [1/2, 2K_max^{2/α}]`,
/// `τ = t^{1/(m−1)}`. `None` for `x ≤ 0`, where `G_L` decreases in `v`.
pub fn find_vmax(x: f64, t: f64, sp: &SupersolutionParams) -> Result<Option<f64>> {
    if !(t > 0.0) {
        return Err(CoagError::Domain(format!("find_vmax needs t > 0, got {t}")));
    }
    if x <= 0.0 {
        return Ok(None);
    }
    let kmax = sp.kmax.max(1.0);
    let tau = t.powf(1.0 / (sp.m as f64 - 1.0));
    let scale = (x * tau).powf(1.0 / sp.alpha) / kmax;
    let (mut lo, mut hi) = (0.5 * scale, 2.0 * kmax.powf(2.0 / sp.alpha) * scale);
    // Widen geometrically when the fitted K_max is too tight for this (x, t).
    let mut widen = 0;
    loop {
        let d_lo = gl_with_dv(x, lo, t, sp)?.1;
        let d_hi = gl_with_dv(x, hi, t, sp)?.1;
        if d_lo > 0.0 && d_hi < 0.0 {
            break;
        }
        if widen == 8 {
            return Err(CoagError::Search(format!(
                "no sign change of dG_L/dv on [{lo:e}, {hi:e}] at x = {x}, t = {t} (derivatives {d_lo:e}, {d_hi:e})"
            )));
        }
        if d_lo <= 0.0 {
            lo *= 0.25;
        }
        if d_hi >= 0.0 {
            hi *= 4.0;
        }
        widen += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gl_with_dv(x, mid, t, sp)?.1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// `H` and `∂ᵥH` given a precomputed `v_max(x, t)`.
pub fn h_with_dv(x: f64, v: f64, t: f64, vmax: Option<f64>, sp: &SupersolutionParams) -> Result<(f64, f64)> {
    let (g, dg) = gl_with_dv(x, v, t, sp)?;
    if t == 0.0 || x <= 0.0 || dg <= 0.0 || sp.in_strip(x, v, t) {
        return Ok((g, dg));
    }
    match vmax {
        Some(vm) => Ok((eval_gl(x, vm, t, sp)?, 0.0)),
        None => Ok((g, dg)),
    }
}

pub fn eval_h(x: f64, v: f64, t: f64, sp: &SupersolutionParams) -> Result<f64> {
    let vmax = if t > 0.0 { find_vmax(x, t, sp)? } else { None };
    Ok(h_with_dv(x, v, t, vmax, sp)?.0)
}

/// `G = B_t H` for `t` within [`SupersolutionParams::horizon`].
pub fn eval_g(x: f64, v: f64, t: f64, sp: &SupersolutionParams) -> Result<f64> {
    check_horizon(t, sp)?;
    Ok(sp.b(t) * eval_h(x, v, t, sp)?)
}

fn check_horizon(t: f64, sp: &SupersolutionParams) -> Result<()> {
    let t_max = sp.horizon();
    if t > t_max * (1.0 + 1e-12) {
        return Err(CoagError::Horizon { t, t_max });
    }
    Ok(())
}

/// Relative finite-difference steps for `∂ₜ` and `∂ₓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdSteps {
    pub rel_t: f64,
    pub rel_x: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { rel_t: 1e-3, rel_x: 1e-3 }
    }
}

/// Centred difference with one Richardson step.
fn richardson(f: impl Fn(f64) -> Result<f64>, at: f64, h: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> { Ok((f(at + h)? - f(at - h)?) / (2.0 * h)) };
    let (d1, d2) = (d(h)?, d(0.5 * h)?);
    Ok((4.0 * d2 - d1) / 3.0)
}

fn h_at(x: f64, v: f64, t: f64, sp: &SupersolutionParams) -> Result<f64> {
    let vmax = if t > 0.0 && x > 0.0 { find_vmax(x, t, sp)? } else { None };
    Ok(h_with_dv(x, v, t, vmax, sp)?.0)
}

/// One column of `f` on the volume grid of `vgrid`, at the sample position.
pub struct Column<'a> {
    pub values: &'a [f64],
    pub grid: &'a GridSpec,
}

/// The residual split as `transport + Σ_j coeff_j f_j` over the bins of `g`,
/// with `G` on the bins.
struct Linearised {
    transport: f64,
    coeff: Vec<f64>,
    g_bins: Vec<f64>,
}

fn linearise(g: &GridSpec, x: f64, v: f64, t: f64, sp: &SupersolutionParams, k: &KernelSpec, fd: FdSteps) -> Result<Linearised> {
    check_horizon(t, sp)?;
    if !(t > 0.0) {
        return Err(CoagError::Domain("residual needs t > 0".into()));
    }
    let vmax = if x > 0.0 { find_vmax(x, t, sp)? } else { None };
    let b = sp.b(t);
    let vs = g.v_centers();
    let edges = g.v_edges();
    let g_bins = vs
        .iter()
        .map(|&vj| Ok(b * h_with_dv(x, vj, t, vmax, sp)?.0))
        .collect::<Result<Vec<f64>>>()?;
    let hv = h_with_dv(x, v, t, vmax, sp)?.0;
    let dt_h = richardson(|s| h_at(x, v, s, sp), t, fd.rel_t * t)?;
    let dx_h = richardson(|y| h_at(y, v, t, sp), x, fd.rel_x * x.abs().max(0.1))?;
    let transport = sp.b_prime(t) * hv + b * (dt_h + v.powf(sp.alpha) * dx_h);

    let half = 0.5 * v;
    let mut coeff = Vec::with_capacity(g.nv);
    for j in 0..g.nv {
        let w = edges[j + 1] - edges[j];
        let mut c = b * hv * k.eval_unchecked(v, vs[j]) * w;
        if edges[j] < half {
            let top = edges[j + 1].min(half);
            let vp = if top < edges[j + 1] { 0.5 * (edges[j] + top) } else { vs[j] };
            let gv = b * h_with_dv(x, v - vp, t, vmax, sp)?.0;
            c -= k.eval_unchecked(v - vp, vp) * gv * (top - edges[j]);
        }
        coeff.push(c);
    }
    Ok(Linearised { transport, coeff, g_bins })
}

/// `∂ₜG + v^α∂ₓG − ∫₀^{v/2} K(v−v',v') G(v−v') f(v') dv' + G(v) ∫ K(v,v') f(v') dv'`
/// at one point, with `f` given on a volume grid. Returns an error if `f`
/// exceeds `G` anywhere on the column.
pub fn residual_column(
    f: &Column,
    x: f64,
    v: f64,
    t: f64,
    sp: &SupersolutionParams,
    k: &KernelSpec,
    fd: FdSteps,
) -> Result<f64> {
    let lin = linearise(f.grid, x, v, t, sp, k, fd)?;
    let mut worst: Option<(usize, f64)> = None;
    for (j, (&fj, &gj)) in f.values.iter().zip(&lin.g_bins).enumerate() {
        let excess = fj / gj;
        if excess > 1.0 + 1e-9 && worst.is_none_or(|(_, e)| excess > e) {
            worst = Some((j, excess));
        }
    }
    if let Some((j, e)) = worst {
        return Err(CoagError::Argument(format!(
            "f exceeds G on the column at x = {x}: worst bin v = {:e} with f/G = {e}",
            f.grid.v_center(j)
        )));
    }
    Ok(lin.transport + lin.coeff.iter().zip(f.values).map(|(c, f)| c * f).sum::<f64>())
}

/// Smallest residual over all columns `0 ≤ f ≤ G` on the grid. The residual
/// is affine in `f`, so the minimiser takes `f = G` on bins with a negative
/// coefficient and `f = 0` elsewhere.
pub fn worst_case_residual(
    g: &GridSpec,
    x: f64,
    v: f64,
    t: f64,
    sp: &SupersolutionParams,
    k: &KernelSpec,
    fd: FdSteps,
) -> Result<f64> {
    let lin = linearise(g, x, v, t, sp, k, fd)?;
    Ok(lin.transport + lin.coeff.iter().zip(&lin.g_bins).map(|(c, g)| c.min(0.0) * g).sum::<f64>())
}

/// [`residual_column`] with the column read from `f` by linear interpolation in `x`.
pub fn supersolution_residual(
    f: &crate::grid::StateField,
    x: f64,
    v: f64,
    t: f64,
    sp: &SupersolutionParams,
    k: &KernelSpec,
    fd: FdSteps,
) -> Result<f64> {
    let g = f.grid;
    let (i0, i1, w) = crate::grid::bracket((x - g.x_min) / g.dx() - 0.5, g.nx);
    let col: Vec<f64> = (0..g.nv).map(|b| (1.0 - w) * f.get(i0, b) + w * f.get(i1, b)).collect();
    residual_column(&Column { values: &col, grid: &g }, x, v, t, sp, k, fd)
}

/// Sample domain for the fits and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sweep {
    pub samples: usize,
    pub seed: u64,
    pub x_range: (f64, f64),
    pub v_range: (f64, f64),
}

impl Sweep {
    pub fn points(&self, t_max: f64) -> Vec<CharSample> {
        char_samples(self.samples, self.seed, self.x_range, self.v_range, t_max)
            .into_iter()
            .map(|s| CharSample { t: s.t.max(1e-3 * t_max), ..s })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualSweep {
    pub min: f64,
    pub at: CharSample,
    /// Smallest `residual / G`, which stays meaningful where `G` is tiny.
    pub min_relative: f64,
    pub at_relative: CharSample,
    pub samples: usize,
}

/// Which column `f` the residual sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fill {
    /// The transported initial datum.
    Transported,
    /// The worst column below `G`, see [`worst_case_residual`].
    WorstCase,
}

/// Minimum residual over the sweep with `f` the transported initial datum
/// on the volume grid of `vgrid`.
pub fn residual_sweep(
    sp: &SupersolutionParams,
    k: &KernelSpec,
    vgrid: &GridSpec,
    points: &[CharSample],
    fd: FdSteps,
) -> Result<ResidualSweep> {
    residual_sweep_with(sp, k, vgrid, points, fd, Fill::Transported)
}

pub fn residual_sweep_with(
    sp: &SupersolutionParams,
    k: &KernelSpec,
    vgrid: &GridSpec,
    points: &[CharSample],
    fd: FdSteps,
    fill: Fill,
) -> Result<ResidualSweep> {
    let data = InitialData { c0: sp.c0, m: sp.m, p: sp.p, alpha: sp.alpha };
    let vs = vgrid.v_centers();
    let values = par::map_indexed(points.len(), |n| -> Result<(f64, f64)> {
        let s = points[n];
        let r = match fill {
            Fill::Transported => {
                let col: Vec<f64> = vs.iter().map(|&v| data.transported(s.x, v, s.t)).collect();
                residual_column(&Column { values: &col, grid: vgrid }, s.x, s.v, s.t, sp, k, fd)?
            }
            Fill::WorstCase => worst_case_residual(vgrid, s.x, s.v, s.t, sp, k, fd)?,
        };
        Ok((r, r / eval_g(s.x, s.v, s.t, sp)?))
    });
    let mut out = ResidualSweep {
        min: f64::INFINITY,
        at: points[0],
        min_relative: f64::INFINITY,
        at_relative: points[0],
        samples: points.len(),
    };
    for (r, s) in values.into_iter().zip(points) {
        let (r, rel) = r?;
        if r < out.min {
            out.min = r;
            out.at = *s;
        }
        if rel < out.min_relative {
            out.min_relative = rel;
            out.at_relative = *s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct K2Fit {
    /// `max H(x, v−v', t) / H(x, v, t)` over `v' ∈ (0, v/2)`.
    pub value_ratio: f64,
    /// `max ∂ᵥH(x, v', t) / ∂ᵥH(x, v, t)` over `v' ∈ (v/2, v)` where `∂ᵥH(v) < 0`.
    pub derivative_ratio: f64,
}

impl K2Fit {
    pub fn k2(&self) -> f64 {
        self.value_ratio.max(self.derivative_ratio).max(1.0)
    }
}

pub fn fit_k2(sp: &SupersolutionParams, points: &[CharSample]) -> Result<K2Fit> {
    let rows = par::map_indexed(points.len(), |n| -> Result<(f64, f64)> {
        let s = points[n];
        let vmax = if s.t > 0.0 && s.x > 0.0 { find_vmax(s.x, s.t, sp)? } else { None };
        let (h, dh) = h_with_dv(s.x, s.v, s.t, vmax, sp)?;
        let mut vr = 0.0f64;
        for frac in [0.05, 0.25, 0.45, 0.5] {
            vr = vr.max(h_with_dv(s.x, s.v * (1.0 - frac), s.t, vmax, sp)?.0 / h);
        }
        let mut dr = 0.0f64;
        if dh < 0.0 {
            for frac in [0.5, 0.55, 0.75, 0.95] {
                let d = h_with_dv(s.x, s.v * frac, s.t, vmax, sp)?.1;
                dr = dr.max(d / dh);
            }
        }
        Ok((vr, dr))
    });
    let mut fit = K2Fit { value_ratio: 0.0, derivative_ratio: 0.0 };
    for r in rows {
        let (a, b) = r?;
        fit.value_ratio = fit.value_ratio.max(a);
        fit.derivative_ratio = fit.derivative_ratio.max(b);
    }
    Ok(fit)
}

/// Moment orders entering the coagulation estimates.
pub fn moment_orders(gamma: f64) -> Vec<f64> {
    let mut n = vec![0.0, 0.5, 1.0, gamma, (2.0 * gamma).max(1.0)];
    n.sort_by(f64::total_cmp);
    n.dedup();
    n
}

/// `M_n(x, t) = ∫₀^∞ v^n H(x, v, t) dv`.
pub fn moment_h(n: f64, x: f64, t: f64, sp: &SupersolutionParams) -> Result<f64> {
    let vmax = if t > 0.0 && x > 0.0 { find_vmax(x, t, sp)? } else { None };
    let mut err = None;
    let mut f = |v: f64| match h_with_dv(x, v, t, vmax, sp) {
        Ok((h, _)) => v.powf(n) * h,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let (lo, hi): (f64, f64) = (1e-12, 1e8);
    // Beyond `hi`, bound H by the t-independent envelope 2^{m+1}C₀v^{−p}.
    let mut total = 2f64.powi(sp.m as i32 + 1) * sp.c0 * hi.powf(n + 1.0 - sp.p) / (sp.p - n - 1.0);
    let mut splits = vec![lo, 1.0, hi];
    for cut in [Some(sp.r), vmax].into_iter().flatten() {
        if cut > lo && cut < hi {
            splits.push(cut);
        }
    }
    splits.sort_by(f64::total_cmp);
    for w in splits.windows(2) {
        total += integrate_log(&mut f, w[0], w[1], 0.0, 1e-7)?.value;
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub k3: f64,
    /// `(n, smallest K₃ for that order)`.
    pub per_order: Vec<(f64, f64)>,
    /// Log-log slope of `M_1` against `|x|` for `x ∈ [−100, −10]`.
    pub decay_slope_n1: f64,
    pub expected_slope_n1: f64,
}

/// Fits the smallest `K₃` with `M_n(x,t) ≤ K₃C₀/(1+|x|^{m−(n+1)/α})` over
/// the grid of positions and times.
pub fn moment_envelopes(sp: &SupersolutionParams, xs: &[f64], ts: &[f64]) -> Result<MomentReport> {
    let orders = moment_orders(sp.gamma);
    let p_bound = (2.0 * sp.gamma + 1.0).max(2.0);
    if !(sp.p > p_bound) {
        return Err(CoagError::Argument(format!("moment envelopes need p > {p_bound}, got {}", sp.p)));
    }
    let jobs: Vec<(f64, f64, f64)> = orders
        .iter()
        .flat_map(|&n| xs.iter().flat_map(move |&x| ts.iter().map(move |&t| (n, x, t))))
        .collect();
    let vals = par::map_indexed(jobs.len(), |j| {
        let (n, x, t) = jobs[j];
        let e = sp.m as f64 - (n + 1.0) / sp.alpha;
        moment_h(n, x, t, sp).map(|mn| mn * (1.0 + x.abs().powf(e)) / sp.c0)
    });
    let mut per_order: Vec<(f64, f64)> = orders.iter().map(|&n| (n, 0.0)).collect();
    for (job, v) in jobs.iter().zip(vals) {
        let v = v?;
        let slot = per_order.iter_mut().find(|(n, _)| *n == job.0).expect("order present");
        slot.1 = slot.1.max(v);
    }
    let k3 = per_order.iter().fold(0.0f64, |m, (_, k)| m.max(*k));
    let t = ts.iter().cloned().fold(0.0, f64::max);
    let far = logspace(10.0, 100.0, 9);
    let lx: Vec<f64> = far.iter().map(|x| x.ln()).collect();
    let ly = far
        .iter()
        .map(|&x| moment_h(1.0, -x, t, sp).map(f64::ln))
        .collect::<Result<Vec<f64>>>()?;
    let (slope, _, _) = linear_fit(&lx, &ly);
    Ok(MomentReport {
        k3,
        per_order,
        decay_slope_n1: slope,
        expected_slope_n1: -(sp.m as f64 - 2.0 / sp.alpha),
    })
}

/// Smallest `K_max ≥ 1` with `x τ / K_max ≤ v_max^α ≤ K_max x τ` on the sweep (`x > 0`).
pub fn fit_kmax(sp: &SupersolutionParams, points: &[CharSample]) -> Result<f64> {
    let probe = SupersolutionParams { kmax: sp.kmax.max(4.0), ..*sp };
    let pos: Vec<CharSample> = points.iter().filter(|s| s.x > 0.0 && s.t > 0.0).cloned().collect();
    let rows = par::map_indexed(pos.len(), |n| -> Result<f64> {
        let s = pos[n];
        let vm = find_vmax(s.x, s.t, &probe)?.expect("x > 0");
        let tau = s.t.powf(1.0 / (sp.m as f64 - 1.0));
        let r = vm.powf(sp.alpha) / (s.x * tau);
        Ok(r.max(1.0 / r))
    });
    rows.into_iter().try_fold(1.0f64, |m, r| Ok(m.max(r?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub x: f64,
    pub t: f64,
    pub samples: usize,
    /// Largest second difference found; negative certifies concavity.
    pub max_second_difference: f64,
    pub window: (f64, f64),
}

/// Second differences of `G_L` in `v` over the window
/// `v^α ∈ [xτ/K_max, K_max xτ]`.
pub fn check_d2v_gl(x: f64, t: f64, sp: &SupersolutionParams) -> Result<ConcavityReport> {
    if !(x > 0.0) {
        return Err(CoagError::Domain(format!("concavity window needs x > 0, got {x}")));
    }
    if !(t > 0.0) {
        return Err(CoagError::Domain(format!("concavity window needs t > 0, got {t}")));
    }
    let tau = t.powf(1.0 / (sp.m as f64 - 1.0));
    let centre = x * tau;
    let lo = (centre / sp.kmax).powf(1.0 / sp.alpha);
    let hi = (centre * sp.kmax).powf(1.0 / sp.alpha);
    let n = 21;
    let mut worst = f64::NEG_INFINITY;
    for j in 0..n {
        let v = if n == 1 || hi == lo { lo } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 };
        let h = 1e-3 * v;
        let d2 = (eval_gl(x, v + h, t, sp)? - 2.0 * eval_gl(x, v, t, sp)? + eval_gl(x, v - h, t, sp)?) / (h * h);
        worst = worst.max(d2);
    }
    Ok(ConcavityReport { x, t, samples: n, max_second_difference: worst, window: (lo, hi) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DxReport {
    pub x: f64,
    pub t: f64,
    pub vmax: f64,
    pub dx: f64,
    /// Same derivative with the difference step doubled.
    pub dx_doubled: f64,
}

/// `∂ₓG_L(x, v_max(x,t), t)` by centred differences.
pub fn check_dx_gl_at_vmax(x: f64, t: f64, sp: &SupersolutionParams) -> Result<DxReport> {
    if !(x > 0.0) {
        return Err(CoagError::Domain(format!("needs x > 0, got {x}")));
    }
    let vmax = find_vmax(x, t, sp)?.expect("x > 0");
    let h = 1e-4 * x;
    let d = |h: f64| -> Result<f64> { Ok((eval_gl(x + h, vmax, t, sp)? - eval_gl(x - h, vmax, t, sp)?) / (2.0 * h)) };
    Ok(DxReport { x, t, vmax, dx: d(h)?, dx_doubled: d(2.0 * h)? })
}

/// Samples violating `G ≤ 2^{m+1}C₀/(1+|x|^m+v^p)`.
pub fn t_independent_violations(sp: &SupersolutionParams, points: &[CharSample]) -> Result<usize> {
    let rows = par::map_indexed(points.len(), |n| -> Result<bool> {
        let s = points[n];
        let g = eval_g(s.x, s.v, s.t, sp)?;
        Ok(g > 2f64.powi(sp.m as i32 + 1) * sp.profile(s.x, s.v) * (1.0 + 1e-12))
    });
    rows.into_iter().try_fold(0usize, |c, r| Ok(c + r? as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaStep {
    pub lambda: f64,
    pub horizon: f64,
    pub min_residual: f64,
    pub min_relative: f64,
}

/// Doubling search from `λ = 1/16` for the first `λ` whose residual sweep,
/// sampled on `(0, min(T(λ), t_cap)]`, stays above `−tol` and whose
/// residual relative to `G` stays above `−rel_tol`. `t_cap` is the time
/// range the fitted constants were taken from.
#[allow(clippy::too_many_arguments)]
pub fn lambda_search(
    sp: &SupersolutionParams,
    k: &KernelSpec,
    vgrid: &GridSpec,
    sweep: &Sweep,
    t_cap: f64,
    tol: f64,
    rel_tol: f64,
    fd: FdSteps,
    fill: Fill,
) -> Result<(f64, Vec<LambdaStep>)> {
    let mut lambda = 1.0 / 16.0;
    let mut trail = Vec::new();
    for _ in 0..40 {
        let trial = SupersolutionParams { lambda, ..*sp };
        let pts = sweep.points(trial.horizon().min(t_cap));
        let r = residual_sweep_with(&trial, k, vgrid, &pts, fd, fill)?;
        trail.push(LambdaStep { lambda, horizon: trial.horizon(), min_residual: r.min, min_relative: r.min_relative });
        if r.min >= -tol && r.min_relative >= -rel_tol {
            return Ok((lambda, trail));
        }
        lambda *= 2.0;
    }
    Err(CoagError::Search(format!("no admissible lambda up to {lambda:e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub params: SupersolutionParams,
    pub horizon: f64,
    pub k2: K2Fit,
    pub moments: MomentReport,
    pub tune: TuneReport,
    pub lambda_trail: Vec<LambdaStep>,
    /// Sweep with `f` the transported datum.
    pub residual: ResidualSweep,
    /// Sweep over the worst column below `G`.
    pub worst_residual: ResidualSweep,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationSpec {
    pub delta: f64,
    pub sweep: Sweep,
    /// Samples for the characteristic-bound tuning of `R`.
    pub char_samples: usize,
    /// Volume range of those samples; it must reach well past `2R`.
    pub char_v_range: (f64, f64),
    pub r_ceiling: f64,
    /// Sample time range before a horizon is known.
    pub t_initial: f64,
    pub fd: FdSteps,
    pub max_rounds: usize,
    /// Column used by the `λ` search.
    pub lambda_fill: Fill,
    /// Floor for `residual / G` in the `λ` search, per unit time.
    pub rel_tol: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            delta: 0.25,
            sweep: Sweep { samples: 1000, seed: 7, x_range: (-4.0, 6.0), v_range: (1e-2, 1e2) },
            char_samples: 500,
            char_v_range: (1e-2, 1e15),
            r_ceiling: 1e15,
            t_initial: 0.05,
            fd: FdSteps::default(),
            max_rounds: 4,
            lambda_fill: Fill::WorstCase,
            rel_tol: 1e-6,
        }
    }
}

fn fit_constants(sp: &mut SupersolutionParams, spec: &CalibrationSpec, t_max: f64) -> Result<(K2Fit, MomentReport)> {
    let pts = spec.sweep.points(t_max);
    sp.kmax = fit_kmax(sp, &pts)?;
    let k2 = fit_k2(sp, &pts)?;
    sp.k2 = k2.k2();
    let xs: Vec<f64> = (0..=20).map(|j| spec.sweep.x_range.0 + (spec.sweep.x_range.1 - spec.sweep.x_range.0) * j as f64 / 20.0).collect();
    let ts = [0.25 * t_max, t_max];
    let moments = moment_envelopes(sp, &xs, &ts)?;
    sp.k3 = moments.k3;
    Ok((k2, moments))
}

/// Fits `K_max, K₂, K₃` on `t ≤ t_fit`, sets `L`, tunes `R`, refits and
/// searches `λ`. The verified horizon is `min(T(λ), t_fit)`; when `T(λ)` is
/// the smaller one the fits are repeated on the shorter range.
pub fn calibrate(data: &InitialData, k: &KernelSpec, vgrid: &GridSpec, spec: &CalibrationSpec) -> Result<Calibration> {
    let mut sp = SupersolutionParams::new(data, k, spec.delta)?;
    sp.r = spec.r_ceiling;
    let mut t_fit = spec.t_initial;
    let mut rounds = 0;
    loop {
        rounds += 1;
        fit_constants(&mut sp, spec, t_fit)?;
        sp.l = sp.drift_strength();
        let cs = char_samples(spec.char_samples, spec.sweep.seed ^ 0x5eed, spec.sweep.x_range, spec.char_v_range, t_fit);
        let tune = auto_tune_r(spec.delta, &sp.char_params(), &cs, spec.r_ceiling)?;
        sp.r = tune.r;
        let (k2, moments) = fit_constants(&mut sp, spec, t_fit)?;
        sp.l = sp.drift_strength();
        let tol = 1e-6 * sp.c0;
        let (lambda, lambda_trail) = lambda_search(&sp, k, vgrid, &spec.sweep, t_fit, tol, spec.rel_tol, spec.fd, spec.lambda_fill)?;
        sp.lambda = lambda;
        let horizon = sp.horizon().min(t_fit);
        if sp.horizon() >= t_fit || rounds >= spec.max_rounds {
            let pts = spec.sweep.points(horizon);
            let residual = residual_sweep(&sp, k, vgrid, &pts, spec.fd)?;
            let worst_residual = residual_sweep_with(&sp, k, vgrid, &pts, spec.fd, Fill::WorstCase)?;
            return Ok(Calibration { params: sp, horizon, k2, moments, tune, lambda_trail, residual, worst_residual, rounds });
        }
        t_fit = sp.horizon();
    }
}

//! Backward characteristics of the approximate transport model
//!
//! ```text
//! ∂t X = −V^α,    ∂t V = −L V^γ ξ_R(V) / (1 + |X|^{m−d}),    X(0)=x, V(0)=v,
//! ```
//!
//! their variational derivatives in `v`, the drift potential `ψ`, the
//! conjugating map `Φ`, and sampled checks of the a-priori estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CoagError, Result};
use crate::numerics::{quad, rk, smoothstep};
use crate::par;

/// `d` from the floor rule: `[2/α]+1` if `[2/α]` is odd, else `[2/α]+2`.
pub fn d_exponent(alpha: f64) -> u32 {
    let fl = (2.0 / alpha + 1e-12).floor() as u32;
    if fl % 2 == 1 {
        fl + 1
    } else {
        fl + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharParams {
    pub l: f64,
    pub r: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub m: u32,
    pub d: u32,
}

impl CharParams {
    pub fn new(l: f64, r: f64, alpha: f64, gamma: f64, m: u32) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CoagError::config("initial.alpha", "alpha must lie in (0,1)"));
        }
        if !(l >= 0.0 && l.is_finite()) {
            return Err(CoagError::config("supersolution.L", "L must be >= 0"));
        }
        if !(r > 0.0) {
            return Err(CoagError::config("supersolution.R", "R must be positive"));
        }
        let d = d_exponent(alpha);
        if m <= d + 1 {
            return Err(CoagError::config(
                "initial.m",
                format!("requires m > d+1 = {}, got {m}", d + 1),
            ));
        }
        Ok(Self { l, r, alpha, gamma, m, d })
    }

    /// Spatial decay exponent of the drift, `m − d`.
    #[inline]
    pub fn q(&self) -> i32 {
        (self.m - self.d) as i32
    }

    pub fn with_r(&self, r: f64) -> Self {
        Self { r, ..*self }
    }

    pub fn with_l(&self, l: f64) -> Self {
        Self { l, ..*self }
    }

    /// Cut-off `ξ_R` (smoothstep on `[R, 2R]`) and its derivative.
    #[inline]
    pub fn xi(&self, v: f64) -> (f64, f64) {
        let (s, ds) = smoothstep((v - self.r) / self.r);
        (s, ds / self.r)
    }

    /// Drift is identically zero along the whole path.
    #[inline]
    fn drift_free(&self, v: f64) -> bool {
        self.l == 0.0 || v <= self.r
    }
}

/// State of a backward characteristic after elapsed time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharPath {
    pub x: f64,
    pub v: f64,
    pub dvx: f64,
    pub dvv: f64,
    pub t: f64,
}

fn closed_form(x: f64, v: f64, t: f64, alpha: f64) -> CharPath {
    CharPath {
        x: x - v.powf(alpha) * t,
        v,
        dvx: -alpha * v.powf(alpha - 1.0) * t,
        dvv: 1.0,
        t,
    }
}

pub fn integrate_characteristics(x: f64, v: f64, t: f64, p: &CharParams, tol: f64) -> Result<CharPath> {
    integrate_traced(x, v, t, p, tol, |_| {})
}

/// As [`integrate_characteristics`], reporting every accepted step.
pub fn integrate_traced(
    x: f64,
    v: f64,
    t: f64,
    p: &CharParams,
    tol: f64,
    mut observe: impl FnMut(&CharPath),
) -> Result<CharPath> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(CoagError::Domain(format!("volume must be positive, got {v}")));
    }
    if !(t >= 0.0) {
        return Err(CoagError::Domain(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(CharPath { x, v, dvx: 0.0, dvv: 1.0, t: 0.0 });
    }
    if p.drift_free(v) {
        let out = closed_form(x, v, t, p.alpha);
        observe(&out);
        return Ok(out);
    }

    // Scaled unknowns keep the error control meaningful when X crosses 0.
    let va = v.powf(p.alpha);
    let sx = 1f64.max(x.abs()).max(va * t);
    let sxv = (p.alpha * va / v * t).max(f64::MIN_POSITIVE);
    let (a, g, l, q) = (p.alpha, p.gamma, p.l, p.q());
    let rhs = |_: f64, y: &[f64; 4]| -> [f64; 4] {
        let xx = y[0] * sx;
        let vv = (y[1] * v).max(f64::MIN_POSITIVE);
        let xv = y[2] * sxv;
        let vvv = y[3];
        let (xi, dxi) = p.xi(vv);
        let ax = xx.abs();
        let den = 1.0 + ax.powi(q);
        let vg = vv.powf(g);
        let dx = -vv.powf(a);
        let dv = -l * vg * xi / den;
        let dxv = -a * vv.powf(a - 1.0) * vvv;
        let dden = q as f64 * ax.powi(q - 2) * xx;
        let dvv = -l * (g * vg / vv * xi + vg * dxi) * vvv / den + l * vg * xi * dden * xv / (den * den);
        [dx / sx, dv / v, dxv / sxv, dvv]
    };
    let opts = rk::RkOptions {
        rtol: tol,
        atol: tol,
        h_init: Some((t * 1e-3).min(1e-2 / va.max(1.0))),
        ..Default::default()
    };
    let scale = |tt: f64, y: &[f64; 4]| CharPath {
        x: y[0] * sx,
        v: y[1] * v,
        dvx: y[2] * sxv,
        dvv: y[3],
        t: tt,
    };
    let (y, _) = rk::integrate(rhs, 0.0, [x / sx, 1.0, 0.0, 1.0], t, &opts, |tt, y| {
        observe(&scale(tt, y))
    })
    .map_err(|e| match e {
        CoagError::Integration { t, state, message } => CoagError::Integration {
            t,
            state: vec![state[0] * sx, state[1] * v, state[2] * sxv, state[3]],
            message,
        },
        other => other,
    })?;
    Ok(scale(t, &y))
}

const TAIL_START: f64 = 1e3;

/// `∫_y^∞ dξ/(1+ξ^q)` for `y ≥ TAIL_START`, by the convergent series in `y^{−q}`.
fn algebraic_tail(y: f64, q: i32) -> f64 {
    let qf = q as f64;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 0..20 {
        let e = (k + 1) as f64 * qf - 1.0;
        let term = y.powf(-e) / e;
        sum += sign * term;
        if term < 1e-18 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    sum
}

/// `∫_0^x dξ/(1+ξ^q)` for `0 ≤ x ≤ TAIL_START`.
fn core_integral(x: f64, q: i32) -> f64 {
    let f = |s: f64| 1.0 / (1.0 + s.powi(q));
    let mut acc = 0.0;
    // Split where the integrand turns over, then at decades.
    let mut lo = 0.0;
    for hi in [1.0, 10.0, 100.0, TAIL_START] {
        let b = hi.min(x);
        if b > lo {
            acc += quad::integrate(f, lo, b, 1e-15, 1e-13).map(|r| r.value).unwrap_or(f64::NAN);
        }
        lo = hi;
        if x <= hi {
            break;
        }
    }
    acc
}

/// `ψ(x) = ∫_{−∞}^x L/(1+|ξ|^{m−d}) dξ`.
pub fn psi(x: f64, p: &CharParams) -> f64 {
    let q = p.q();
    let half = core_integral(TAIL_START, q) + algebraic_tail(TAIL_START, q);
    let upto = |y: f64| -> f64 {
        // ∫_0^y for y ≥ 0
        if y <= TAIL_START {
            core_integral(y, q)
        } else {
            half - algebraic_tail(y, q)
        }
    };
    let i = if x >= 0.0 { half + upto(x) } else { half - upto(-x) };
    p.l * i
}

/// `ψ(+∞)`, by the same quadrature.
pub fn psi_infinity(p: &CharParams) -> f64 {
    let q = p.q();
    2.0 * p.l * (core_integral(TAIL_START, q) + algebraic_tail(TAIL_START, q))
}

/// Solution of `∂z Φ = Φ^{γ−α} ξ_R(Φ)`, `Φ(0,v) = v`, for any real `z`.
/// Backward characteristics give `z = ψ(X)−ψ(x) ≤ 0`.
pub fn phi(z: f64, v: f64, p: &CharParams) -> Result<f64> {
    let gm = p.gamma - p.alpha;
    if gm >= 1.0 - 1e-12 {
        return Err(CoagError::config(
            "kernel.gamma",
            format!("gamma - alpha = {gm} must be < 1"),
        ));
    }
    if !(v > 0.0) {
        return Err(CoagError::Domain(format!("volume must be positive, got {v}")));
    }
    if v <= p.r || z == 0.0 {
        return Ok(v);
    }
    let e = 1.0 - gm;
    let base = v.powf(e) + e * z;
    let closed = if base > 0.0 { Some(base.powf(1.0 / e)) } else { None };
    if v >= 2.0 * p.r {
        if let Some(c) = closed {
            if z > 0.0 || c >= 2.0 * p.r {
                return Ok(c);
            }
        }
    }
    let rhs = |_: f64, y: &[f64; 1]| {
        let w = y[0].max(p.r);
        [w.powf(gm) * p.xi(w).0 / v]
    };
    let opts = rk::RkOptions { rtol: 1e-12, atol: 1e-14, ..Default::default() };
    let (y, _) = rk::integrate(rhs, 0.0, [1.0], z, &opts, |_, _| {})?;
    let out = y[0] * v;
    // Sandwich between the identity and the untruncated closed form.
    let slack = 1e-8 * v;
    let ok = if z > 0.0 {
        out >= v - slack && closed.is_none_or(|c| out <= c + slack)
    } else {
        out <= v + slack && out >= closed.unwrap_or(0.0).max(p.r) - slack
    };
    if !ok {
        return Err(CoagError::Integration {
            t: z,
            state: vec![out],
            message: format!("Phi({z}, {v}) = {out} violates the sandwich bounds"),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharSample {
    pub x: f64,
    pub v: f64,
    pub t: f64,
}

/// Deterministic samples: `x` uniform, `v` log-uniform, `t` uniform on `[0, t_max]`.
pub fn char_samples(n: usize, seed: u64, x_range: (f64, f64), v_range: (f64, f64), t_max: f64) -> Vec<CharSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lv0, lv1) = (v_range.0.ln(), v_range.1.ln());
    (0..n)
        .map(|_| CharSample {
            x: rng.random_range(x_range.0..=x_range.1),
            v: rng.random_range(lv0..=lv1).exp(),
            t: rng.random_range(0.0..=t_max),
        })
        .collect()
}

pub const CHECK_NAMES: [&str; 10] = [
    "V", "X", "dvX", "dvV", "dvV_strip_abs", "dvV_strip_upper", "xnegative", "xpos1", "xpos2", "xpos3",
];

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    pub applicable: usize,
    pub failed: usize,
    /// Smallest normalised margin (negative means violated).
    pub worst_margin: f64,
    pub witness: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub index: usize,
    pub check: &'static str,
    pub sample: CharSample,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub delta: f64,
    pub params: CharParams,
    pub samples: usize,
    pub checks: Vec<CheckSummary>,
    pub violations: Vec<BoundViolation>,
    pub failures: Vec<(usize, String)>,
    /// Extremes of `∂v V` observed, for the record.
    pub dvv_range: (f64, f64),
}

impl BoundReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.failures.is_empty()
    }
}

const REL_SLACK: f64 = 1e-9;

/// Normalised margin of `lo ≤ val ≤ hi`: `min(val−lo, hi−val)/scale`.
fn two_sided(lo: f64, val: f64, hi: f64) -> f64 {
    let scale = lo.abs().max(hi.abs()).max(val.abs()).max(f64::MIN_POSITIVE);
    let m = (val - lo).min(hi - val) / scale;
    if m > -REL_SLACK {
        m.max(0.0)
    } else {
        m
    }
}

fn sample_margins(s: &CharSample, delta: f64, p: &CharParams, path: &CharPath) -> [Option<f64>; 10] {
    let (x, v, t) = (s.x, s.v, s.t);
    let a = p.alpha;
    let vat = v.powf(a) * t;
    let mut out = [None; 10];
    out[0] = Some(two_sided((1.0 - delta) * v, path.v, (1.0 + delta) * v));
    out[1] = Some(two_sided((1.0 - delta) * vat, x - path.x, (1.0 + delta) * vat));
    let base = a * v.powf(a - 1.0) * t;
    out[2] = Some(two_sided(base / 18.0, -path.dvx, 18.0 * base));
    let strip = x >= (1.0 - 2.0 * delta) * vat && x <= (1.0 + 2.0 * delta) * vat;
    if !strip {
        out[3] = Some(two_sided(0.25, path.dvv, 2.25));
    } else if p.l > 0.0 {
        // The strip bound is stated for L > 0; with L = 0 it degenerates to dvV = 0.
        let cap = 36.0 * p.l * 1f64.max(v.powf(p.gamma - 1.0) * t);
        out[4] = Some(two_sided(-cap, path.dvv, cap));
        out[5] = Some(two_sided(f64::NEG_INFINITY, path.dvv, 2.0).min(1.0));
    }
    let ax = path.x.abs();
    if x <= 0.0 {
        out[6] = Some(two_sided(x.abs() + (1.0 - delta) * vat, ax, x.abs() + (1.0 + delta) * vat));
    } else {
        if t >= x / ((1.0 - delta) * v.powf(a)) {
            out[7] = Some(two_sided((x - (1.0 - delta) * vat).abs(), ax, (x - (1.0 + delta) * vat).abs()));
        }
        if t <= x / ((1.0 + delta) * v.powf(a)) {
            out[8] = Some(two_sided((x - (1.0 + delta) * vat).abs(), ax, (x - (1.0 - delta) * vat).abs()));
        }
        if t > x / ((1.0 + delta) * v.powf(a)) && t < x / ((1.0 - delta) * v.powf(a)) {
            out[9] = Some(two_sided(f64::NEG_INFINITY, ax, 3.0 * vat).min(1.0));
        }
    }
    out
}

/// Checks the characteristic estimates on every sample.
pub fn verify_char_bounds(samples: &[CharSample], delta: f64, p: &CharParams) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(CoagError::Argument(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    let results = par::map_indexed(samples.len(), |i| {
        let s = &samples[i];
        integrate_characteristics(s.x, s.v, s.t, p, 1e-8).map(|path| (path, sample_margins(s, delta, p, &path)))
    });
    let mut checks: Vec<CheckSummary> = CHECK_NAMES
        .iter()
        .map(|&name| CheckSummary { name, applicable: 0, failed: 0, worst_margin: f64::INFINITY, witness: None })
        .collect();
    let mut violations = Vec::new();
    let mut failures = Vec::new();
    let mut dvv_range = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Err(e) => failures.push((i, e.to_string())),
            Ok((path, margins)) => {
                dvv_range = (dvv_range.0.min(path.dvv), dvv_range.1.max(path.dvv));
                for (c, m) in margins.iter().enumerate() {
                    let Some(m) = *m else { continue };
                    let cs = &mut checks[c];
                    cs.applicable += 1;
                    if m < cs.worst_margin {
                        cs.worst_margin = m;
                        cs.witness = Some(i);
                    }
                    if m < 0.0 {
                        cs.failed += 1;
                        violations.push(BoundViolation { index: i, check: CHECK_NAMES[c], sample: samples[i], margin: m });
                    }
                }
            }
        }
    }
    Ok(BoundReport {
        delta,
        params: *p,
        samples: samples.len(),
        checks,
        violations,
        failures,
        dvv_range,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    pub r: f64,
    /// `(R, violations)` for every tested level.
    pub trail: Vec<(f64, usize)>,
}

/// Doubling search from `R = 1` for the smallest tested `R` with a clean
/// [`verify_char_bounds`] report.
pub fn auto_tune_r(delta: f64, p: &CharParams, samples: &[CharSample], ceiling: f64) -> Result<TuneReport> {
    let mut r = 1.0;
    let mut trail = Vec::new();
    loop {
        let rep = verify_char_bounds(samples, delta, &p.with_r(r))?;
        let bad = rep.violations.len() + rep.failures.len();
        trail.push((r, bad));
        if bad == 0 {
            return Ok(TuneReport { r, trail });
        }
        r *= 2.0;
        if r > ceiling {
            return Err(CoagError::Search(format!(
                "no violation-free R up to the ceiling {ceiling:e} (last tested {:e} had {bad} violations)",
                r / 2.0
            )));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: f64, r: f64) -> CharParams {
        CharParams::new(l, r, 2.0 / 3.0, 4.0 / 3.0, 8).unwrap()
    }

    #[test]
    fn d_rule() {
        assert_eq!(d_exponent(2.0 / 3.0), 4);
        assert_eq!(d_exponent(0.5), 6);
        assert_eq!(d_exponent(0.9), 4);
    }

    #[test]
    fn pure_transport_below_cutoff() {
        let p = CharParams::new(1.0, 10.0, 0.5, 1.0, 12).unwrap();
        let c = integrate_characteristics(0.0, 1.0, 2.0, &p, 1e-8).unwrap();
        assert_eq!((c.x, c.v, c.dvv), (-2.0, 1.0, 1.0));
        let z = integrate_characteristics(0.3, 5.0, 0.0, &p, 1e-8).unwrap();
        assert_eq!((z.x, z.v, z.dvx, z.dvv), (0.3, 5.0, 0.0, 1.0));
    }

    #[test]
    fn psi_arctangent_and_symmetry() {
        // m − d = 2 needs m = d + 2.
        let p = CharParams::new(1.0, 1.0, 2.0 / 3.0, 1.0, 6).unwrap();
        assert_eq!(p.q(), 2);
        assert!((psi(0.0, &p) - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        let p4 = params(1.0, 1.0);
        let inf = psi_infinity(&p4);
        assert!((psi(0.0, &p4) - inf / 2.0).abs() < 1e-12);
        let q = 4.0;
        let exact = 2.0 * (std::f64::consts::PI / q) / (std::f64::consts::PI / q).sin();
        assert!((inf - exact).abs() < 1e-10);
        assert!((psi(1.3, &p4.with_l(2.0)) - 2.0 * psi(1.3, &p4)).abs() < 1e-12);
        assert!(psi(-1e4, &p4) < psi(-10.0, &p4));
        assert!(psi(5e3, &p4) < inf && psi(5e3, &p4) > psi(10.0, &p4));
    }

    #[test]
    fn phi_branches() {
        let p = params(1.0, 10.0);
        assert_eq!(phi(0.0, 30.0, &p).unwrap(), 30.0);
        assert_eq!(phi(3.0, 5.0, &p).unwrap(), 5.0);
        let flat = CharParams { gamma: p.alpha, ..p };
        assert!((phi(2.5, 40.0, &flat).unwrap() - 42.5).abs() < 1e-12);
        let band = phi(1.0, 15.0, &p).unwrap();
        assert!(band >= 15.0);
        let down = phi(-1.0, 15.0, &p).unwrap();
        assert!(down <= 15.0 && down >= 10.0);
        let bad = CharParams { gamma: 1.0 + p.alpha, ..p };
        assert!(matches!(phi(1.0, 30.0, &bad), Err(CoagError::Config { .. })));
    }

    #[test]
    fn conjugacy_above_cutoff() {
        let p = params(2.0, 100.0);
        for &(x, v, t) in &[(0.5, 1e3, 0.01), (-1.0, 5e3, 0.002), (2.0, 2e4, 0.01)] {
            let tol = 1e-9;
            let c = integrate_characteristics(x, v, t, &p, tol).unwrap();
            let z = psi(c.x, &p) - psi(x, &p);
            let ph = phi(z, v, &p).unwrap();
            assert!((c.v - ph).abs() <= 10.0 * tol * v, "{} vs {}", c.v, ph);
        }
    }

    #[test]
    fn variational_matches_finite_differences() {
        let p = params(2.0, 50.0);
        for &(x, v, t) in &[(0.5, 200.0, 0.05), (-0.5, 1e3, 0.01), (1.0, 80.0, 0.1)] {
            let c = integrate_characteristics(x, v, t, &p, 1e-8).unwrap();
            let h = 1e-3 * v;
            let fd = |hh: f64| {
                let a = integrate_characteristics(x, v + hh, t, &p, 1e-8).unwrap();
                let b = integrate_characteristics(x, v - hh, t, &p, 1e-8).unwrap();
                ((a.x - b.x) / (2.0 * hh), (a.v - b.v) / (2.0 * hh))
            };
            let (x1, v1) = fd(h);
            let (x2, v2) = fd(h / 2.0);
            let fdx = (4.0 * x2 - x1) / 3.0;
            let fdv = (4.0 * v2 - v1) / 3.0;
            assert!((fdx - c.dvx).abs() <= 1e-4 * c.dvx.abs(), "dvX {fdx} vs {}", c.dvx);
            assert!((fdv - c.dvv).abs() <= 1e-4 * c.dvv.abs(), "dvV {fdv} vs {}", c.dvv);
        }
    }

    #[test]
    fn backward_flow_is_monotone() {
        let p = params(3.0, 10.0);
        let mut last = (f64::INFINITY, f64::INFINITY);
        integrate_traced(1.0, 300.0, 0.05, &p, 1e-8, |c| {
            assert!(c.x <= last.0 && c.v <= last.1 * (1.0 + 1e-12));
            last = (c.x, c.v);
        })
        .unwrap();
    }

    #[test]
    fn zero_drift_tunes_immediately() {
        let p = params(0.0, 1.0);
        let s = char_samples(50, 3, (-3.0, 3.0), (1e-2, 1e6), 0.1);
        let rep = auto_tune_r(0.25, &p, &s, 2f64.powi(40) * 1e-2).unwrap();
        assert_eq!(rep.r, 1.0);
    }

    #[test]
    fn tuning_finds_finite_r_and_bounds_hold() {
        let p = CharParams::new(1.0, 1.0, 0.5, 1.0, 12).unwrap();
        let s = char_samples(120, 11, (-3.0, 3.0), (1e-2, 1e8), 0.5);
        let rep = auto_tune_r(0.25, &p, &s, 2f64.powi(40) * 1e-2).unwrap();
        assert!(rep.r.is_finite() && !rep.trail.is_empty());
        let strong = p.with_l(20.0);
        let rep = auto_tune_r(0.25, &strong, &s, 2f64.powi(40) * 1e-2).unwrap();
        assert!(rep.r > 1.0);
        let tighter = auto_tune_r(0.125, &strong, &s, 2f64.powi(40) * 1e-2).unwrap();
        assert!(tighter.r >= rep.r);
        let zero_t: Vec<_> = s.iter().map(|c| CharSample { t: 0.0, ..*c }).collect();
        assert!(verify_char_bounds(&zero_t, 0.25, &p.with_r(1.0)).unwrap().is_clean());
    }
}

//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{CoagError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to `abs_tol + rel_tol * |I|` by recursive
/// bisection with a global error budget.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quad> {
    if a == b {
        return Ok(Quad {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    const MAX_INTERVALS: usize = 4000;
    let (v0, e0) = gk15(&mut f, a, b);
    // (lo, hi, value, error)
    let mut parts: Vec<(f64, f64, f64, f64)> = vec![(a, b, v0, e0)];
    let mut evaluations = 15;
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(CoagError::Domain("non-finite integrand".into()));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(Quad {
                value: total,
                error: err,
                evaluations,
            });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(CoagError::Iteration(format!(
                "quadrature on [{a:e}, {b:e}] stalled at error {err:e}"
            )));
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval can no longer be split in floating point
            return Ok(Quad {
                value: total,
                error: err,
                evaluations,
            });
        }
        let (vl, el) = gk15(&mut f, lo, mid);
        let (vr, er) = gk15(&mut f, mid, hi);
        evaluations += 30;
        parts.push((lo, mid, vl, el));
        parts.push((mid, hi, vr, er));
    }
}

/// Integrates a positive-axis integrand over `[lo, hi]` in the variable
/// `u = ln v`, which suits power-law profiles spanning many decades.
pub fn integrate_log<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quad> {
    integrate(
        |u| {
            let v = u.exp();
            f(v) * v
        },
        lo.ln(),
        hi.ln(),
        abs_tol,
        rel_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((q.value - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn arctangent() {
        let q = integrate(|x| 1.0 / (1.0 + x * x), -1e3, 1e3, 1e-12, 1e-12).unwrap();
        let exact = 2.0 * 1e3f64.atan();
        assert!((q.value - exact).abs() < 1e-10, "{} vs {}", q.value, exact);
    }

    #[test]
    fn log_variable() {
        let q = integrate_log(|v| (-v).exp(), 1e-8, 50.0, 1e-13, 1e-12).unwrap();
        assert!((q.value - ((-1e-8f64).exp() - (-50.0f64).exp())).abs() < 1e-10);
    }
}

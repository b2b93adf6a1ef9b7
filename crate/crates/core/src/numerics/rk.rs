//! Embedded Dormand–Prince 5(4) integrator with adaptive step control.

use crate::error::{CoagError, Result};

#[derive(Debug, Clone, Copy)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for RkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            h_init: None,
            h_min: 1e-300,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RkStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
/// `observe` sees every accepted step as `(t, y)`.
pub fn integrate<const N: usize, F, O>(
    mut rhs: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: &RkOptions,
    mut observe: O,
) -> Result<([f64; N], RkStats)>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    let mut stats = RkStats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((y0, stats));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    stats.evaluations += 1;
    let mut h = opts.h_init.unwrap_or_else(|| span.abs() * 1e-3).min(span.abs());

    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(CoagError::Integration {
                t,
                state: y.to_vec(),
                message: format!("exceeded {} steps", opts.max_steps),
            });
        }
        let last = h >= (t1 - t).abs();
        if last {
            h = (t1 - t).abs();
        }
        let hs = h * dir;
        let k2 = rhs(t + C2 * hs, &axpy(&y, &[(hs * A21, &k1)]));
        let k3 = rhs(t + C3 * hs, &axpy(&y, &[(hs * A31, &k1), (hs * A32, &k2)]));
        let k4 = rhs(
            t + C4 * hs,
            &axpy(&y, &[(hs * A41, &k1), (hs * A42, &k2), (hs * A43, &k3)]),
        );
        let k5 = rhs(
            t + C5 * hs,
            &axpy(
                &y,
                &[(hs * A51, &k1), (hs * A52, &k2), (hs * A53, &k3), (hs * A54, &k4)],
            ),
        );
        let k6 = rhs(
            t + hs,
            &axpy(
                &y,
                &[
                    (hs * A61, &k1),
                    (hs * A62, &k2),
                    (hs * A63, &k3),
                    (hs * A64, &k4),
                    (hs * A65, &k5),
                ],
            ),
        );
        let y_new = axpy(
            &y,
            &[(hs * B1, &k1), (hs * B3, &k3), (hs * B4, &k4), (hs * B5, &k5), (hs * B6, &k6)],
        );
        let t_new = if last { t1 } else { t + hs };
        let k7 = rhs(t_new, &y_new);
        stats.evaluations += 6;

        let mut err: f64 = 0.0;
        for i in 0..N {
            let e = hs
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
            observe(t, &y);
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < opts.h_min || h <= t.abs() * f64::EPSILON {
                return Err(CoagError::Integration {
                    t,
                    state: y.to_vec(),
                    message: format!("step size underflow (h={h:e})"),
                });
            }
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (y, st) = integrate(
            |_, y: &[f64; 1]| [-y[0]],
            0.0,
            [1.0],
            3.0,
            &RkOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-9);
        assert!(st.accepted > 0);
    }

    #[test]
    fn backward_direction_and_oscillator() {
        let (y, _) = integrate(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [0.0, 1.0],
            -2.0,
            &RkOptions { rtol: 1e-11, atol: 1e-13, ..Default::default() },
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - (-2.0f64).sin()).abs() < 1e-9);
        assert!((y[1] - (-2.0f64).cos()).abs() < 1e-9);
    }

    #[test]
    fn underflow_is_reported() {
        let r = integrate(
            |_, y: &[f64; 1]| [1.0 / (1.0 - y[0]).powi(3)],
            0.0,
            [0.0],
            10.0,
            &RkOptions { h_min: 1e-12, ..Default::default() },
            |_, _| {},
        );
        assert!(matches!(r, Err(CoagError::Integration { .. })));
    }
}

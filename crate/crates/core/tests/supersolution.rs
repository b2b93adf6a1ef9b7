use std::sync::OnceLock;

use coag_core::grid::{make_initial, moment, GridSpec, InitialData, StateField};
use coag_core::kernels::KernelSpec;
use coag_core::supersolution::{
    calibrate, check_d2v_gl, check_dx_gl_at_vmax, eval_g, eval_gl, eval_h, find_vmax, gl_with_dv, moment_envelopes,
    moment_h, supersolution_residual, Calibration, CalibrationSpec, FdSteps, SupersolutionParams,
};
use coag_core::CoagError;

fn desk() -> &'static Calibration {
    static CAL: OnceLock<Calibration> = OnceLock::new();
    CAL.get_or_init(|| {
        let k = KernelSpec::rain(2.0 / 3.0).unwrap();
        let d = InitialData::new(0.1, 8, 2.0 / 3.0, k.gamma).unwrap();
        let g = GridSpec::new(-4.0, 6.0, 128, 1e-2, 1e2, 128).unwrap();
        calibrate(&d, &k, &g, &CalibrationSpec::default()).unwrap()
    })
}

fn sp() -> SupersolutionParams {
    desk().params
}

fn profile(sp: &SupersolutionParams, x: f64, v: f64) -> f64 {
    sp.c0 / (1.0 + x.abs().powi(sp.m as i32) + v.powf(sp.p))
}

#[test]
fn everything_is_the_datum_at_time_zero() {
    let sp = sp();
    for &(x, v) in &[(-2.0, 0.1), (0.0, 1.0), (1.5, 30.0)] {
        let want = profile(&sp, x, v);
        assert!((eval_gl(x, v, 0.0, &sp).unwrap() - want).abs() <= 1e-15 * want);
        assert!((eval_h(x, v, 0.0, &sp).unwrap() - want).abs() <= 1e-15 * want);
        assert!((eval_g(x, v, 0.0, &sp).unwrap() - want).abs() <= 1e-15 * want);
    }
}

#[test]
fn negative_positions_decay_at_least_like_the_shrunken_volume() {
    let sp = sp();
    let t = desk().horizon;
    for x in [-3.0f64, -1.0, -0.1, 0.0] {
        for v in [0.05, 1.0, 20.0] {
            let bound = sp.c0 / (1.0 + x.abs().powi(sp.m as i32) + ((1.0 - sp.delta) * v).powf(sp.p));
            assert!(eval_gl(x, v, t, &sp).unwrap() <= bound);
            assert_eq!(eval_h(x, v, t, &sp).unwrap(), eval_gl(x, v, t, &sp).unwrap());
        }
    }
}

#[test]
fn no_maximiser_left_of_the_origin() {
    let sp = sp();
    for t in [1e-4, 1e-2, desk().horizon] {
        assert_eq!(find_vmax(-1.0, t, &sp).unwrap(), None);
    }
}

#[test]
fn maximiser_is_a_critical_point_and_scales_with_x() {
    let sp = sp();
    let t = 0.01;
    for x in [0.5, 1.0, 2.0] {
        let v = find_vmax(x, t, &sp).unwrap().unwrap();
        let (_, dv) = gl_with_dv(x, v, t, &sp).unwrap();
        assert!(dv.abs() <= 1e-10 * sp.c0, "dvG at vmax = {dv:e}");
        let v2 = find_vmax(2.0 * x, t, &sp).unwrap().unwrap();
        let ratio = v2.powf(sp.alpha) / v.powf(sp.alpha) / 2.0;
        assert!(ratio >= 1.0 / sp.kmax.powi(2) && ratio <= sp.kmax.powi(2), "ratio {ratio}");
    }
}

#[test]
fn majorant_is_within_a_factor_two_of_its_cap() {
    let sp = sp();
    let t = desk().horizon;
    for x in [-2.0, 0.3, 1.0, 4.0] {
        for v in [0.02, 0.5, 8.0, 90.0] {
            let h = eval_h(x, v, t, &sp).unwrap();
            let g = eval_g(x, v, t, &sp).unwrap();
            assert!(h <= g && g <= 2.0 * h);
        }
    }
}

#[test]
fn horizon_is_enforced_and_shrinks_with_lambda() {
    let sp = sp();
    let beyond = sp.horizon() * 1.01;
    assert!(matches!(eval_g(0.0, 1.0, beyond, &sp), Err(CoagError::Horizon { .. })));
    let bigger = SupersolutionParams { lambda: 2.0 * sp.lambda, ..sp };
    assert!(bigger.horizon() < sp.horizon());
    assert!(sp.b(sp.horizon()) <= 2.0 * (1.0 + 1e-12));
}

#[test]
fn empty_field_leaves_the_transport_part() {
    let sp = sp();
    let t = 0.5 * desk().horizon;
    let g = GridSpec::new(-4.0, 6.0, 16, 1e-2, 1e2, 64).unwrap();
    let zero = StateField::zeros(g);
    let rain = KernelSpec::rain(2.0 / 3.0).unwrap();
    for &(x, v) in &[(-1.0, 0.5), (0.5, 0.2), (1.0, 5.0), (3.0, 50.0)] {
        let a = supersolution_residual(&zero, x, v, t, &sp, &rain, FdSteps::default()).unwrap();
        let b = supersolution_residual(&zero, x, v, t, &sp, &KernelSpec::zero(), FdSteps::default()).unwrap();
        assert!(a >= -1e-6 * sp.c0, "residual {a:e}");
        assert_eq!(a, b);
    }
}

#[test]
fn fields_above_the_majorant_are_rejected() {
    let sp = sp();
    let g = GridSpec::new(-4.0, 6.0, 16, 1e-2, 1e2, 32).unwrap();
    let big = StateField::from_fn(g, |_, _| 1.0);
    let rain = KernelSpec::rain(2.0 / 3.0).unwrap();
    let r = supersolution_residual(&big, 0.5, 1.0, 0.01, &sp, &rain, FdSteps::default());
    assert!(matches!(r, Err(CoagError::Argument(_))));
}

#[test]
fn concavity_window_and_its_precondition() {
    let sp = sp();
    let r = check_d2v_gl(1.0, 0.01, &sp).unwrap();
    assert!(r.max_second_difference < 0.0);
    assert!(check_d2v_gl(0.0, 0.01, &sp).is_err());
    assert!(check_d2v_gl(-1.0, 0.01, &sp).is_err());
}

#[test]
fn x_derivative_at_the_maximiser_is_not_positive() {
    let sp = sp();
    for x in [0.5, 1.0, 2.0, 4.0] {
        for t in [0.001, 0.01] {
            let r = check_dx_gl_at_vmax(x, t, &sp).unwrap();
            assert!(r.dx <= 1e-12 * sp.c0 && r.dx_doubled <= 1e-12 * sp.c0, "{r:?}");
        }
    }
}

#[test]
fn x_derivative_at_time_zero_is_explicit() {
    let sp = sp();
    let m = sp.m as f64;
    for &(x, v) in &[(0.5, 0.3), (1.0, 1.0), (2.0, 4.0)] {
        let h = 1e-5 * x;
        let fd = (eval_gl(x + h, v, 0.0, &sp).unwrap() - eval_gl(x - h, v, 0.0, &sp).unwrap()) / (2.0 * h);
        let den = 1.0 + x.powf(m) + v.powf(sp.p);
        let exact = -sp.c0 * m * x.powf(m - 1.0) / (den * den);
        assert!(exact < 0.0);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs());
    }
}

#[test]
fn number_moment_matches_the_grid_quadrature() {
    let sp = sp();
    let d = InitialData { c0: sp.c0, m: sp.m, p: sp.p, alpha: sp.alpha };
    let g = GridSpec::with_ratio(-1.0, 3.0, 4, 1e-8, 1e4, 1.02).unwrap();
    let f = make_initial(&d, &g);
    for i in 0..g.nx {
        let x = g.x_center(i);
        let exact = moment_h(0.0, x, 0.0, &sp).unwrap();
        let grid = moment(&f, 0.0, i, None).value;
        assert!((grid - exact).abs() <= 5e-3 * exact, "x = {x}: {grid} vs {exact}");
    }
}

#[test]
fn first_moment_envelope() {
    let cal = desk();
    let sp = cal.params;
    let m1 = moment_h(1.0, 0.0, cal.horizon, &sp).unwrap();
    assert!(m1.is_finite() && m1 <= sp.k3 * sp.c0);
    let rep = moment_envelopes(&sp, &[0.0, 1.0, 4.0], &[cal.horizon]).unwrap();
    assert!((rep.decay_slope_n1 - rep.expected_slope_n1).abs() <= 0.1, "{rep:?}");
}

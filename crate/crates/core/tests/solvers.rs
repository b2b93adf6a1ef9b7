use coag_core::characteristics::CharParams;
use coag_core::coagulation::build_tables;
use coag_core::grid::{make_initial, GridSpec, InitialData, StateField};
use coag_core::kernels::KernelSpec;
use coag_core::solver::{
    mild_residual, picard_iterate, run_approximate_transport, run_approximate_with_source, run_mild_solver,
    run_operator_split, transport_step, transported_initial, ApproxParams, Mode, Profile, RunConfig,
};
use coag_core::supersolution::{calibrate, eval_gl, find_vmax, h_with_dv, CalibrationSpec};
use coag_core::CoagError;

fn half_alpha_data() -> InitialData {
    InitialData::new(0.5, 8, 0.5, 0.0).unwrap()
}

#[test]
fn transport_of_the_datum_is_a_displacement() {
    let d = InitialData::new(0.1, 8, 2.0 / 3.0, 4.0 / 3.0).unwrap();
    let g = GridSpec::new(-4.0, 6.0, 100, 1e-2, 1e2, 16).unwrap();
    let f = make_initial(&d, &g);
    let k = 11;
    let c = g.v_center(k).powf(d.alpha);
    let t = 3.0 * g.dx() / c;
    let moved = transport_step(&f, d.alpha, t);
    for i in 3..g.nx {
        let want = d.transported(g.x_center(i), g.v_center(k), t);
        assert!((moved.get(i, k) - want).abs() <= 1e-12 * want, "cell {i}");
    }
}

#[test]
fn split_without_kernel_repeats_transport() {
    // Both bin speeds are whole multiples of dx/dt, so every shift is exact.
    let d = half_alpha_data();
    let grid = GridSpec::new(-4.0, 6.0, 100, 1.0, 16.0, 2).unwrap();
    let c0 = grid.v_center(0).sqrt();
    assert!((grid.v_center(1).sqrt() / c0 - 2.0).abs() < 1e-12);
    let dt = grid.dx() / c0;
    let mut cfg = RunConfig::default();
    cfg.grid = grid;
    cfg.kernel = KernelSpec::zero();
    cfg.initial = d;
    cfg.mode = Mode::OperatorSplit;
    cfg.horizon = 5.0 * dt;
    cfg.dt = dt;
    cfg.output_dt = 0.0;
    let sol = run_operator_split(&cfg).unwrap();
    let mut f = make_initial(&d, &grid);
    for (n, snap) in sol.trajectory.iter().enumerate().skip(1) {
        f = transport_step(&f, d.alpha, dt);
        assert_eq!(snap.values, f.values, "step {n}");
        assert!((snap.boundary_flux - f.boundary_flux).abs() <= 1e-12 * f.boundary_flux.max(1e-300));
    }
}

#[test]
fn mild_without_kernel_is_pure_transport() {
    let mut cfg = RunConfig::default();
    cfg.kernel = KernelSpec::zero();
    cfg.grid = GridSpec::new(-4.0, 6.0, 32, 1e-2, 1e2, 24).unwrap();
    cfg.horizon = 0.05;
    cfg.dt = 0.01;
    cfg.output_dt = 0.0;
    let sol = run_mild_solver(&cfg).unwrap();
    assert_eq!(sol.iterations(), 1);
    assert_eq!(sol.iterate_diffs[0].sup_diff, 0.0);
    let times: Vec<f64> = sol.trajectory.iter().map(|f| f.time).collect();
    let f0 = transported_initial(&cfg.initial_profile(), &cfg.grid, &times, cfg.initial.alpha);
    for (a, b) in sol.trajectory.iter().zip(&f0) {
        assert_eq!(a.values, b.values);
    }
}

/// RK4 on the semi-discrete coagulation equation of one column.
fn rk4_column(col: &[f64], grid: &GridSpec, k: &KernelSpec, t: f64, steps: usize) -> Vec<f64> {
    let tables = build_tables(grid, k);
    let h = t / steps as f64;
    let n = col.len();
    let rhs = |y: &[f64]| {
        let mut out = vec![0.0; n];
        tables.rhs(y, &mut out);
        out
    };
    let axpy = |y: &[f64], a: f64, d: &[f64]| -> Vec<f64> { y.iter().zip(d).map(|(y, d)| y + a * d).collect() };
    let mut y = col.to_vec();
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(&axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(&axpy(&y, h, &k3));
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

#[test]
fn one_slab_matches_an_ode_oracle() {
    let err = |dt: f64| {
        let mut cfg = RunConfig::default();
        cfg.grid = GridSpec::new(0.0, 1.0, 4, 1e-2, 1e2, 32).unwrap();
        cfg.kernel = KernelSpec::constant(1.0).unwrap();
        cfg.profile = Profile::Exponential { amplitude: 1.0 };
        cfg.verified_horizon = Some(1.0);
        cfg.horizon = dt;
        cfg.dt = dt;
        cfg.picard_tol = 1e-14;
        cfg.picard_max_iters = 60;
        cfg.output_dt = 0.0;
        let sol = run_mild_solver(&cfg).unwrap();
        let init = &sol.trajectory[0];
        let want = rk4_column(init.column(2), &cfg.grid, &cfg.kernel, dt, 200);
        let got = sol.last().column(2);
        got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let (e1, e2) = (err(0.2), err(0.1));
    assert!(e1 < 1e-2, "{e1}");
    assert!(e1 / e2 >= 4.0, "error ratio {}", e1 / e2);
}

#[test]
fn converged_trajectory_solves_the_mild_equation() {
    let mut cfg = RunConfig::default();
    cfg.horizon = 0.01;
    cfg.dt = 0.0025;
    cfg.output_dt = 0.0;
    let sol = run_mild_solver(&cfg).unwrap();
    let r = mild_residual(&sol.trajectory, &cfg, 100, 5).unwrap();
    assert!(r <= 10.0 * cfg.picard_tol, "residual {r:e}");
}

#[test]
fn iterates_stay_below_the_majorant() {
    let cfg0 = RunConfig::default();
    let cal = calibrate(&cfg0.initial, &cfg0.kernel, &cfg0.grid, &CalibrationSpec::default()).unwrap();
    let sp = cal.params;
    let mut cfg = cfg0.clone();
    cfg.verified_horizon = Some(cal.horizon);
    cfg.horizon = cal.horizon;
    cfg.dt = cal.horizon / 4.0;
    let g = cfg.grid;
    let times: Vec<f64> = (0..=4).map(|k| k as f64 * cfg.dt).collect();
    let profile = cfg.initial_profile();
    let mut traj = transported_initial(&profile, &g, &times, cfg.initial.alpha);
    let majorant: Vec<StateField> = times
        .iter()
        .map(|&t| {
            let mut f = StateField::zeros(g);
            for i in 0..g.nx {
                let x = g.x_center(i);
                let vmax = if t > 0.0 && x > 0.0 { find_vmax(x, t, &sp).unwrap() } else { None };
                for k in 0..g.nv {
                    f.values[g.idx(i, k)] = sp.b(t) * h_with_dv(x, g.v_center(k), t, vmax, &sp).unwrap().0;
                }
            }
            f
        })
        .collect();
    for n in 0..4 {
        for (f, big) in traj.iter().zip(&majorant) {
            for (a, b) in f.values.iter().zip(&big.values) {
                assert!(*a <= b * (1.0 + 1e-6), "iterate {n} at t = {}: {a} > {b}", f.time);
            }
        }
        traj = picard_iterate(&traj, &profile, &cfg).unwrap();
    }
}

#[test]
fn unverified_horizon_is_refused() {
    let mut cfg = RunConfig::default();
    cfg.horizon = 0.1;
    cfg.dt = 0.01;
    assert!(matches!(run_mild_solver(&cfg), Err(CoagError::Horizon { .. })));
}

#[test]
fn approximate_model_without_drift_is_transport() {
    let mut cfg = RunConfig::default();
    cfg.mode = Mode::ApproximateTransport;
    cfg.approx = ApproxParams { l: 0.0, r: 1.0 };
    cfg.grid = GridSpec::new(-4.0, 6.0, 40, 1e-2, 1e2, 20).unwrap();
    cfg.horizon = 0.05;
    cfg.dt = 0.01;
    cfg.output_dt = 0.0;
    let sol = run_approximate_transport(&cfg).unwrap();
    let mut f = make_initial(&cfg.initial, &cfg.grid);
    for snap in sol.trajectory.iter().skip(1) {
        f = transport_step(&f, cfg.initial.alpha, cfg.dt);
        assert_eq!(snap.values, f.values);
    }
}

#[test]
fn approximate_model_rejects_large_steps() {
    let mut cfg = RunConfig::default();
    cfg.mode = Mode::ApproximateTransport;
    cfg.approx = ApproxParams { l: 100.0, r: 1.0 };
    cfg.dt = 0.01;
    assert!(matches!(run_approximate_transport(&cfg), Err(CoagError::Stability { .. })));
}

#[test]
fn manufactured_solution_converges_at_first_order() {
    let (alpha, gamma, m) = (2.0 / 3.0, 4.0 / 3.0, 8u32);
    let p = CharParams::new(2.0, 1.0, alpha, gamma, m).unwrap();
    let q = p.q();
    // x-independent, so transport is exact away from the inflow edge.
    let u = |v: f64, t: f64| (-t - v).exp();
    let source = move |x: f64, v: f64, t: f64| {
        let b = p.l * v.powf(gamma) * p.xi(v).0 / (1.0 + x.abs().powi(q));
        -u(v, t) - b * u(v, t)
    };
    let t_end = 0.05;
    let err = |nv: usize| {
        let mut cfg = RunConfig::default();
        cfg.mode = Mode::ApproximateTransport;
        cfg.approx = ApproxParams { l: p.l, r: p.r };
        cfg.grid = GridSpec::new(-4.0, 6.0, 50, 1e-2, 1e2, nv).unwrap();
        cfg.profile = Profile::Exponential { amplitude: 1.0 };
        cfg.horizon = t_end;
        cfg.dt = t_end / (nv as f64 * 2.0);
        cfg.output_dt = 0.0;
        let sol = run_approximate_with_source(&cfg, Some(&source)).unwrap();
        let f = sol.last();
        let g = f.grid;
        let x_safe = g.x_min + 100f64.powf(alpha) * t_end;
        let mut worst = 0.0f64;
        for i in 0..g.nx {
            if g.x_center(i) - 0.5 * g.dx() < x_safe {
                continue;
            }
            for k in 0..g.nv {
                worst = worst.max((f.get(i, k) - u(g.v_center(k), t_end)).abs());
            }
        }
        worst
    };
    let (e1, e2, e3) = (err(64), err(128), err(256));
    let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
    assert!(order >= 0.8, "errors {e1:e} {e2:e} {e3:e}, order {order}");
}

#[test]
fn approximate_model_tracks_the_characteristic_majorant() {
    let cfg0 = RunConfig::default();
    let cal = calibrate(&cfg0.initial, &cfg0.kernel, &cfg0.grid, &CalibrationSpec::default()).unwrap();
    // With the tuned R the cut-in lies far above the grid; a unit R puts the
    // v >= 2R regime on it.
    let r = 1.0;
    let sp = coag_core::supersolution::SupersolutionParams { r, ..cal.params };
    let t_end = 0.002;
    let mut cfg = cfg0.clone();
    cfg.mode = Mode::ApproximateTransport;
    cfg.approx = ApproxParams { l: sp.l, r };
    cfg.grid = GridSpec::new(-4.0, 6.0, 200, 1e-2, 1e2, 1024).unwrap();
    cfg.horizon = t_end;
    cfg.dt = t_end / 200.0;
    cfg.output_dt = 0.0;
    let sol = run_approximate_transport(&cfg).unwrap();
    let f = sol.last();
    let g = f.grid;
    for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let i = ((x - g.x_min) / g.dx()) as usize;
        let xc = g.x_center(i);
        for k in 0..g.nv {
            let v = g.v_center(k);
            let gl = eval_gl(xc, v, t_end, &sp).unwrap();
            if v < 2.0 * r || gl < 1e-4 * sp.c0 {
                continue;
            }
            let rel = (f.get(i, k) - gl).abs() / gl;
            assert!(rel <= 0.1, "x = {xc}, v = {v}: {} vs {gl}", f.get(i, k));
        }
    }
}

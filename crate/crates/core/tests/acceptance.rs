//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one `PASS`/`FAIL` line per criterion; exits non-zero on any failure.

use std::time::{Duration, Instant};

use coag_core::characteristics::{auto_tune_r, char_samples, integrate_characteristics, verify_char_bounds};
use coag_core::diagnostics::{contraction_estimator, gelation_detector, moment_profile, total_number};
use coag_core::numerics::linear_fit;
use coag_core::par;
use coag_core::snapshot::write_snapshot;
use coag_core::solver::{
    gelation_sweep, relative_sup_diff, run_homogeneous, run_mild_solver, run_operator_split, Mode, Profile, RunConfig,
    Solution,
};
use coag_core::supersolution::{
    calibrate, check_d2v_gl, find_vmax, residual_sweep, residual_sweep_with, Calibration, CalibrationSpec, Fill,
    Sweep,
};
use coag_core::{GridSpec, KernelSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn desk() -> RunConfig {
    RunConfig::default()
}

/// Shared desk state: calibration and one run per solver at the verified horizon.
struct Desk {
    cal: Calibration,
    cal_time: Duration,
    mild: Solution,
    mild_time: Duration,
    split: Solution,
    split_time: Duration,
}

fn desk_runs() -> Desk {
    let cfg = desk();
    let s = Instant::now();
    let cal = calibrate(&cfg.initial, &cfg.kernel, &cfg.grid, &CalibrationSpec::default()).expect("calibration");
    let cal_time = s.elapsed();
    let mut run = cfg.clone();
    run.verified_horizon = Some(cal.horizon);
    run.horizon = cal.horizon;
    run.dt = cal.horizon / 20.0;
    run.output_dt = 0.0;
    let s = Instant::now();
    let mild = run_mild_solver(&RunConfig { mode: Mode::MildPicard, ..run.clone() }).expect("mild run");
    let mild_time = s.elapsed();
    let s = Instant::now();
    let split = run_operator_split(&RunConfig { mode: Mode::OperatorSplit, ..run }).expect("split run");
    let split_time = s.elapsed();
    Desk { cal, cal_time, mild, mild_time, split, split_time }
}

fn homogeneous_cfg(kernel: KernelSpec) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid = GridSpec::new(0.0, 1.0, 2, 1e-3, 1e3, 256).unwrap();
    cfg.kernel = kernel;
    cfg.profile = Profile::Exponential { amplitude: 1.0 };
    cfg.mode = Mode::Homogeneous;
    cfg.horizon = 1.0;
    cfg.dt = 1e-3;
    cfg.output_dt = 0.1;
    cfg
}

fn constant_kernel_oracle() -> Outcome {
    let cfg = homogeneous_cfg(KernelSpec::constant(1.0).unwrap());
    let s = Instant::now();
    let sol = run_homogeneous(&cfg).expect("homogeneous run");
    let t = s.elapsed();
    let m0 = total_number(sol.last());
    let exact = 2.0 / 3.0;
    let rel = (m0 - exact).abs() / exact;
    outcome(rel <= 1e-2 && secs(t) < 5.0, format!("M0(1) = {m0:.6} vs 2/3, rel {rel:.2e} (<= 1e-2); {:.2} s (< 5 s)", secs(t)))
}

fn additive_kernel_oracle() -> Outcome {
    let cfg = homogeneous_cfg(KernelSpec::sum(1.0).unwrap());
    let s = Instant::now();
    let sol = run_homogeneous(&cfg).expect("homogeneous run");
    let t = s.elapsed();
    let m0 = total_number(sol.last());
    let exact = (-1.0f64).exp();
    let rel = (m0 - exact).abs() / exact;
    let drift = sol.series.ledger_drift();
    outcome(
        rel <= 1e-2 && drift <= 1e-3 && secs(t) < 10.0,
        format!(
            "M0(1) = {m0:.6} vs e^-1, rel {rel:.2e} (<= 1e-2); mass drift net of overflow {drift:.2e} (<= 1e-3); {:.2} s (< 10 s)",
            secs(t)
        ),
    )
}

fn mass_conservation(d: &Desk) -> Outcome {
    let mild_drift = d.mild.series.ledger_drift();
    let split_drift = d.split.series.ledger_drift();
    let per_step = d.split.max_ledger_residual;
    let total = d.cal_time + d.mild_time + d.split_time;
    let inside = d.mild.last().time <= d.cal.horizon * (1.0 + 1e-12);
    outcome(
        inside && mild_drift <= 1e-3 && split_drift <= 1e-3 && per_step <= 1e-9 && secs(total) < 120.0,
        format!(
            "T = {} (verified horizon {}); drift mild {mild_drift:.2e}, split {split_drift:.2e} (<= 1e-3); \
             per-step ledger split {per_step:.2e} (<= 1e-9), mild {:.2e}; {:.1} s (< 120 s)",
            d.mild.last().time,
            d.cal.horizon,
            d.mild.max_ledger_residual,
            secs(total)
        ),
    )
}

fn gelation_signature() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.grid = GridSpec::with_ratio(0.0, 1.0, 2, 1e-3, 2e4, 2f64.powf(0.25)).unwrap();
    cfg.kernel = KernelSpec::sum(1.5).unwrap();
    cfg.profile = Profile::Exponential { amplitude: 1.0 };
    cfg.mode = Mode::Homogeneous;
    cfg.horizon = 0.5;
    cfg.dt = 1e-3;
    cfg.output_dt = 0.005;
    cfg.gel_volume = Some(50.0);
    let threshold = 1e-3;
    let pts = gelation_sweep(&cfg, &[1e2, 1e3, 1e4], threshold).expect("sweep");
    let onsets: Vec<Option<f64>> = pts.iter().map(|p| p.onset).collect();
    let decreasing = onsets.iter().all(|o| o.is_some()) && onsets.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());

    let mut inh = RunConfig::default();
    inh.kernel = KernelSpec::sum(1.5).unwrap();
    inh.mode = Mode::OperatorSplit;
    inh.horizon = cfg.horizon;
    inh.dt = 2e-3;
    inh.output_dt = 0.01;
    inh.gel_volume = cfg.gel_volume;
    let sol = run_operator_split(&inh).expect("inhomogeneous run");
    let inh_onset = gelation_detector(&sol.series, threshold);
    let fmt = |o: &Option<f64>| o.map_or("none".to_string(), |t| format!("{t:.4}"));
    outcome(
        decreasing && inh_onset.is_none(),
        format!(
            "homogeneous onset (gel volume 50) N=1e2,1e3,1e4: {}, {}, {} (strictly decreasing); \
             N/2 proxy: {}, {}, {}; inhomogeneous onset: {}",
            fmt(&onsets[0]),
            fmt(&onsets[1]),
            fmt(&onsets[2]),
            fmt(&pts[0].onset_half_n),
            fmt(&pts[1].onset_half_n),
            fmt(&pts[2].onset_half_n),
            fmt(&inh_onset)
        ),
    )
}

fn characteristic_estimates(d: &Desk) -> Outcome {
    let sp = d.cal.params;
    let spec = CalibrationSpec::default();
    // Retune on a fresh sample set, then sweep an independent one.
    let tune_set = char_samples(500, 101, spec.sweep.x_range, spec.char_v_range, d.cal.horizon);
    let tune = auto_tune_r(0.25, &sp.char_params(), &tune_set, spec.r_ceiling).expect("tuning");
    let cp = sp.char_params().with_r(tune.r);
    let sweep = char_samples(500, 202, spec.sweep.x_range, spec.char_v_range, d.cal.horizon);
    let rep = verify_char_bounds(&sweep, 0.25, &cp).expect("sweep");
    let bad = rep.violations.len() + rep.failures.len();

    // Variational derivatives against Richardson-extrapolated differences, in the drift regime.
    let probes = char_samples(40, 303, (-2.0, 4.0), (2.0 * cp.r, 1e3 * cp.r), d.cal.horizon);
    let tol = 1e-11;
    let mut worst = 0.0f64;
    for s in &probes {
        let c = integrate_characteristics(s.x, s.v, s.t, &cp, tol).unwrap();
        let fd = |h: f64| {
            let a = integrate_characteristics(s.x, s.v + h, s.t, &cp, tol).unwrap();
            let b = integrate_characteristics(s.x, s.v - h, s.t, &cp, tol).unwrap();
            ((a.x - b.x) / (2.0 * h), (a.v - b.v) / (2.0 * h))
        };
        let h = 1e-3 * s.v;
        let (x1, v1) = fd(h);
        let (x2, v2) = fd(h / 2.0);
        let (fdx, fdv) = ((4.0 * x2 - x1) / 3.0, (4.0 * v2 - v1) / 3.0);
        worst = worst.max((fdx - c.dvx).abs() / c.dvx.abs()).max((fdv - c.dvv).abs() / c.dvv.abs());
    }
    outcome(
        bad == 0 && worst <= 1e-4,
        format!(
            "tuned R = {:e}; 500-sample sweep violations {bad}; variational vs FD worst rel {worst:.2e} (<= 1e-4)",
            tune.r
        ),
    )
}

fn vmax_scaling(d: &Desk) -> Outcome {
    let sp = d.cal.params;
    let alpha = sp.alpha;
    let m1 = sp.m as f64 - 1.0;
    let n = 11;
    let decade = |lo: f64, j: usize| lo * 10f64.powf(j as f64 / (n - 1) as f64);
    let t_fixed = 0.5 * d.cal.horizon;
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for j in 0..n {
        let x = decade(0.5, j);
        let v = find_vmax(x, t_fixed, &sp).unwrap().unwrap();
        lx.push(x.ln());
        ly.push(v.powf(alpha).ln());
    }
    let (slope_x, _, _) = linear_fit(&lx, &ly);
    let tau_hi = d.cal.horizon.powf(1.0 / m1);
    let (mut lt, mut lyt) = (Vec::new(), Vec::new());
    for j in 0..n {
        let tau = decade(0.1 * tau_hi, j);
        let v = find_vmax(1.0, tau.powf(m1), &sp).unwrap().unwrap();
        lt.push(tau.ln());
        lyt.push(v.powf(alpha).ln());
    }
    let (slope_t, _, _) = linear_fit(&lt, &lyt);
    outcome(
        (slope_x - 1.0).abs() <= 0.05 && (slope_t - 1.0).abs() <= 0.05,
        format!("slope vs x {slope_x:.4}, vs t^(1/(m-1)) {slope_t:.4} (1 +- 0.05)"),
    )
}

fn supersolution_inequality(d: &Desk) -> Outcome {
    let cfg = desk();
    let sp = d.cal.params;
    let spec = CalibrationSpec::default();
    // A sample set independent of the one the lambda search used.
    let sweep = Sweep { seed: 4242, ..spec.sweep };
    let r = residual_sweep(&sp, &cfg.kernel, &cfg.grid, &sweep.points(d.cal.horizon), spec.fd).expect("residual sweep");
    let floor = -1e-6 * sp.c0;
    let worst = residual_sweep_with(&sp, &cfg.kernel, &cfg.grid, &sweep.points(d.cal.horizon), spec.fd, Fill::WorstCase)
        .expect("worst-case sweep");
    outcome(
        r.samples == 1000 && r.min >= floor,
        format!(
            "K2 {:.4}, K3 {:.4}, Kmax {:.4}, L {:.3}, lambda {}, horizon {}; min residual {:.3e} over {} samples (>= {floor:e}); \
             worst column below G: min residual/G {:.3e}",
            sp.k2, sp.k3, sp.kmax, sp.l, sp.lambda, d.cal.horizon, r.min, r.samples, worst.min_relative
        ),
    )
}

fn concavity(d: &Desk) -> Outcome {
    let sp = d.cal.params;
    let h = d.cal.horizon;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for x in [0.25, 0.5, 1.0, 2.0, 4.0, 6.0] {
        for t in [1e-3 * h, 0.1 * h, 0.5 * h, h] {
            let r = check_d2v_gl(x, t, &sp).expect("concavity");
            worst = worst.max(r.max_second_difference);
            count += r.samples;
        }
    }
    outcome(worst < 0.0, format!("largest second difference {worst:.3e} over {count} points (< 0)"))
}

fn picard_contraction(d: &Desk) -> Outcome {
    let rate = |t: f64| {
        let mut cfg = desk();
        cfg.verified_horizon = Some(d.cal.horizon);
        cfg.horizon = t;
        cfg.dt = t / 20.0;
        cfg.picard_tol = 1e-30;
        cfg.picard_max_iters = 4;
        let sol = run_mild_solver(&cfg).expect("mild run");
        contraction_estimator(&sol.iterate_diffs).expect("estimate").ratio
    };
    let full = rate(d.cal.horizon);
    let half = rate(0.5 * d.cal.horizon);
    let factor = full / half;
    outcome(
        full < 1.0 && (1.5..=3.0).contains(&factor),
        format!("tail ratio at T {full:.4e}, at T/2 {half:.4e}; factor {factor:.3} (in [1.5, 3])"),
    )
}

fn cross_solver(d: &Desk) -> Outcome {
    let diff = relative_sup_diff(d.mild.last(), d.split.last());
    let mut cfg = desk();
    cfg.mode = Mode::OperatorSplit;
    cfg.horizon = d.cal.horizon;
    cfg.output_dt = 0.0;
    let base = cfg.horizon / 8.0;
    let run = |dt: f64| run_operator_split(&RunConfig { dt, ..cfg.clone() }).expect("split run");
    let (a, b, r) = (run(base), run(base / 2.0), run(base / 4.0));
    let m1 = |s: &Solution| moment_profile(s.last(), 1.0);
    let (ma, mb, mr) = (m1(&a), m1(&b), m1(&r));
    let gap = |x: &[f64]| x.iter().zip(&mr).fold(0.0f64, |z, (p, q)| z.max((p - q).abs()));
    let ratio = gap(&ma) / gap(&mb);
    // Against a dt/4 reference the error ratio is 2^p + 1 for order p.
    let order = (ratio - 1.0).log2();
    let field_ratio = relative_sup_diff(a.last(), r.last()) / relative_sup_diff(b.last(), r.last());
    outcome(
        diff <= 0.05 && ratio >= 3.0 && order >= 1.9,
        format!(
            "mild vs split rel sup diff {diff:.3e} (<= 0.05); first-moment error ratio {ratio:.3} (>= 3), \
             order {order:.3} (>= 1.9); field error ratio {field_ratio:.3}"
        ),
    )
}

fn determinism(d: &Desk) -> Outcome {
    let mut split = desk();
    split.mode = Mode::OperatorSplit;
    split.output_dt = 0.0;
    let mut mild = desk();
    mild.verified_horizon = Some(d.cal.horizon);
    mild.horizon = 0.25 * d.cal.horizon;
    mild.dt = mild.horizon / 5.0;
    mild.output_dt = 0.0;
    let snapshots = |threads: usize| -> Vec<String> {
        par::with_threads(threads, || {
            let a = run_operator_split(&split).expect("split run");
            let b = run_mild_solver(&mild).expect("mild run");
            a.trajectory.iter().chain(&b.trajectory).map(|f| write_snapshot(f, "determinism")).collect()
        })
    };
    let one = snapshots(1);
    let same = [4, 16].iter().all(|&n| snapshots(n) == one);
    outcome(same, format!("{} snapshots compared at 1, 4 and 16 threads; bit-identical: {same}", one.len()))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} [{name}] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("1 constant-kernel oracle", constant_kernel_oracle());
    report("2 additive-kernel oracle", additive_kernel_oracle());
    let d = desk_runs();
    report("3 mass conservation", mass_conservation(&d));
    report("4 gelation signature", gelation_signature());
    report("5 characteristic estimates", characteristic_estimates(&d));
    report("6 v_max scaling", vmax_scaling(&d));
    report("7 supersolution inequality", supersolution_inequality(&d));
    report("8 concavity", concavity(&d));
    report("9 Picard contraction", picard_contraction(&d));
    report("10 cross-solver agreement", cross_solver(&d));
    report("11 determinism", determinism(&d));
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed in {:.1} s", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use coag_core::characteristics::{auto_tune_r, char_samples, verify_char_bounds};
use coag_core::config::{parse_config, parse_config_str, ParsedConfig};
use coag_core::diagnostics::contraction_estimator;
use coag_core::par;
use coag_core::solver::{
    gelation_sweep, run_approximate_transport, run_homogeneous, run_mild_solver, run_operator_split, Mode, Profile,
    Solution,
};
use coag_core::supersolution::{
    calibrate, check_d2v_gl, check_dx_gl_at_vmax, residual_sweep_with, Calibration, CalibrationSpec, Fill, Sweep,
};
use coag_core::{CoagError, Result};
use serde_json::json;

use crate::output::{write_json, write_solution, Constants, Manifest, DIAGNOSTICS_HEADER};
use crate::{Cli, Command, Failure};

struct Ctx<'a> {
    cli: &'a Cli,
    parsed: ParsedConfig,
    threads: usize,
}

pub fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let parsed = match &cli.config {
        Some(p) => parse_config(p)?,
        None => parse_config_str("")?,
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CoagError::config("--threads", "need at least one thread").into());
    }
    fs::create_dir_all(&cli.out)?;
    let ctx = Ctx { cli, parsed, threads };
    par::with_threads(threads, || match &cli.command {
        Command::Simulate { calibrate } => simulate(&ctx, *calibrate),
        Command::Homogeneous { sweep_n, threshold } => homogeneous(&ctx, sweep_n.as_deref(), *threshold),
        Command::VerifyCharacteristics => verify_characteristics(&ctx),
        Command::VerifySupersolution => verify_supersolution(&ctx),
        Command::Report { inputs } => report(&ctx, inputs),
    })
}

fn calibration_spec(ctx: &Ctx) -> CalibrationSpec {
    let o = ctx.parsed.supersolution;
    let d = CalibrationSpec::default();
    CalibrationSpec { delta: o.delta, sweep: Sweep { samples: o.samples, seed: o.seed, ..d.sweep }, ..d }
}

fn calibrate_config(ctx: &Ctx) -> Result<Calibration> {
    let cfg = &ctx.parsed.run;
    if cfg.profile != Profile::Algebraic {
        return Err(CoagError::config("initial.profile", "the supersolution needs the algebraic profile"));
    }
    calibrate(&cfg.initial, &cfg.kernel, &cfg.grid, &calibration_spec(ctx))
}

fn solve(cfg: &coag_core::solver::RunConfig) -> Result<Solution> {
    match cfg.mode {
        Mode::MildPicard => run_mild_solver(cfg),
        Mode::OperatorSplit => run_operator_split(cfg),
        Mode::Homogeneous => run_homogeneous(cfg),
        Mode::ApproximateTransport => run_approximate_transport(cfg),
    }
}

fn simulate(ctx: &Ctx, with_calibration: bool) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let mut cfg = ctx.parsed.run.clone();
    let mut manifest = Manifest::new("simulate", &ctx.parsed, ctx.threads, ctx.cli.seed);
    if with_calibration {
        let cal = calibrate_config(ctx)?;
        cfg.verified_horizon.get_or_insert(cal.horizon);
        manifest.constants = Constants::from_params(&cal.params, cal.horizon);
    } else if cfg.mode == Mode::ApproximateTransport {
        manifest.constants.l = Some(cfg.approx.l);
        manifest.constants.r = Some(cfg.approx.r);
    }
    if manifest.constants.t.is_none() {
        manifest.constants.t = cfg.verified_horizon;
    }
    let sol = solve(&cfg)?;
    write_solution(&ctx.cli.out, &ctx.parsed, &sol)?;
    manifest.record_solution(&sol);
    let contraction = contraction_estimator(&sol.iterate_diffs).ok();
    manifest.extra = json!({ "mode": cfg.mode, "horizon": cfg.horizon, "contraction": contraction });
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&ctx.cli.out.join("manifest.json"), &manifest)?;
    println!(
        "simulate: mode {:?}, {} steps, {} snapshots, {} Picard iteration(s), ledger drift {:.3e}",
        cfg.mode,
        sol.steps,
        sol.trajectory.len(),
        sol.iterations(),
        manifest.ledger_drift
    );
    Ok(())
}

fn homogeneous(ctx: &Ctx, sweep: Option<&[f64]>, threshold: f64) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let mut cfg = ctx.parsed.run.clone();
    cfg.mode = Mode::Homogeneous;
    let mut manifest = Manifest::new("homogeneous", &ctx.parsed, ctx.threads, ctx.cli.seed);
    match sweep {
        None => {
            let sol = run_homogeneous(&cfg)?;
            write_solution(&ctx.cli.out, &ctx.parsed, &sol)?;
            manifest.record_solution(&sol);
        }
        Some(ns) => {
            if ns.is_empty() || ns.iter().any(|n| !(*n > 0.0)) {
                return Err(CoagError::config("--sweep-N", "expected positive truncation volumes").into());
            }
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(CoagError::config("--threshold", "expected a value in (0, 1)").into());
            }
            let pts = gelation_sweep(&cfg, ns, threshold)?;
            let fmt = |o: Option<f64>| o.map_or("none".to_string(), |t| t.to_string());
            let mut csv = String::from("N,onset,onset_half_N,overflow_mass,steps\n");
            for p in &pts {
                let _ = writeln!(csv, "{},{},{},{},{}", p.n, fmt(p.onset), fmt(p.onset_half_n), p.overflow_mass, p.steps);
                println!("N = {:e}: onset {}", p.n, fmt(p.onset));
            }
            fs::write(ctx.cli.out.join("sweep.csv"), csv)?;
            let onsets: Vec<Option<f64>> = pts.iter().map(|p| p.onset).collect();
            let decreasing =
                onsets.iter().all(Option::is_some) && onsets.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
            manifest.steps = pts.iter().map(|p| p.steps).sum();
            manifest.extra = json!({
                "threshold": threshold,
                "gel_volume": cfg.gel_volume.unwrap_or(0.5 * ns.iter().cloned().fold(f64::INFINITY, f64::min)),
                "sweep": pts,
                "strictly_decreasing_in_N": decreasing,
                "note": "Instantaneous gelation is the limit onset -> 0 as N -> infinity; a finite sweep only shows the trend.",
            });
        }
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&ctx.cli.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn verify_characteristics(ctx: &Ctx) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let o = ctx.parsed.supersolution;
    let spec = calibration_spec(ctx);
    let (mut sp, horizon) = match o.l {
        Some(_) => {
            let cfg = &ctx.parsed.run;
            let sp = coag_core::supersolution::SupersolutionParams::new(&cfg.initial, &cfg.kernel, o.delta)?;
            (sp, cfg.verified_horizon.unwrap_or(cfg.horizon))
        }
        None => {
            let cal = calibrate_config(ctx)?;
            (cal.params, cal.horizon)
        }
    };
    if let Some(l) = o.l {
        sp.l = l;
    }
    let samples = char_samples(o.samples, o.seed, spec.sweep.x_range, spec.char_v_range, horizon);
    let (r, trail) = match o.r {
        Some(r) => (r, Vec::new()),
        None => {
            let tune = auto_tune_r(o.delta, &sp.char_params(), &samples, spec.r_ceiling)?;
            (tune.r, tune.trail)
        }
    };
    sp.r = r;
    let rep = verify_char_bounds(&samples, o.delta, &sp.char_params())?;
    let bad = rep.violations.len() + rep.failures.len();
    let path = ctx.cli.out.join("characteristics_report.json");
    let mut manifest = Manifest::new("verify-characteristics", &ctx.parsed, ctx.threads, ctx.cli.seed);
    manifest.constants = Constants::from_params(&sp, horizon);
    manifest.extra = json!({ "tune_trail": trail, "report": rep, "violations": bad });
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&path, &manifest)?;
    println!("verify-characteristics: L = {:.4}, R = {r:e}, {} samples, {bad} violation(s)", sp.l, rep.samples);
    if bad > 0 {
        return Err(Failure::Violations { count: bad, report: path });
    }
    Ok(())
}

fn verify_supersolution(ctx: &Ctx) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let o = ctx.parsed.supersolution;
    let cfg = &ctx.parsed.run;
    let spec = calibration_spec(ctx);
    let cal = calibrate_config(ctx)?;
    let mut sp = cal.params;
    let mut horizon = cal.horizon;
    let overridden = o.l.is_some() || o.r.is_some() || o.lambda.is_some();
    if overridden {
        sp.l = o.l.unwrap_or(sp.l);
        sp.r = o.r.unwrap_or(sp.r);
        sp.lambda = o.lambda.unwrap_or(sp.lambda);
        horizon = sp.horizon().min(spec.t_initial);
    }
    let pts = spec.sweep.points(horizon);
    let residual = residual_sweep_with(&sp, &cfg.kernel, &cfg.grid, &pts, spec.fd, Fill::Transported)?;
    let worst = residual_sweep_with(&sp, &cfg.kernel, &cfg.grid, &pts, spec.fd, Fill::WorstCase)?;

    let mut violations: Vec<String> = Vec::new();
    let floor = -1e-6 * sp.c0;
    if residual.min < floor {
        violations.push(format!("residual {:e} < {floor:e} at {:?}", residual.min, residual.at));
    }
    if worst.min_relative < -spec.rel_tol {
        violations.push(format!(
            "worst-case residual/G {:e} < {:e} at {:?}",
            worst.min_relative, -spec.rel_tol, worst.at_relative
        ));
    }
    let mut concavity = Vec::new();
    let mut dx = Vec::new();
    for x in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for t in [1e-3 * horizon, 0.1 * horizon, 0.5 * horizon, horizon] {
            let c = check_d2v_gl(x, t, &sp)?;
            if !(c.max_second_difference < 0.0) {
                violations.push(format!("d2v GL = {:e} >= 0 at x = {x}, t = {t}", c.max_second_difference));
            }
            concavity.push(c);
            let d = check_dx_gl_at_vmax(x, t, &sp)?;
            if d.dx > 1e-12 * sp.c0 || d.dx_doubled > 1e-12 * sp.c0 {
                violations.push(format!("dx GL at vmax = {:e} > 0 at x = {x}, t = {t}", d.dx.max(d.dx_doubled)));
            }
            dx.push(d);
        }
    }

    let path = ctx.cli.out.join("supersolution_report.json");
    let mut manifest = Manifest::new("verify-supersolution", &ctx.parsed, ctx.threads, ctx.cli.seed);
    manifest.constants = Constants::from_params(&sp, horizon);
    manifest.extra = json!({
        "overridden": overridden,
        "calibration": cal,
        "residual": residual,
        "worst_case_residual": worst,
        "residual_floor": floor,
        "concavity": concavity,
        "dx_at_vmax": dx,
        "violations": violations,
    });
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&path, &manifest)?;
    println!(
        "verify-supersolution: K2 {:.4}, K3 {:.4}, Kmax {:.4}, lambda {}, L {:.3}, R {:e}, T {}; min residual {:.3e} (>= {floor:e}); {} violation(s)",
        sp.k2,
        sp.k3,
        sp.kmax,
        sp.lambda,
        sp.l,
        sp.r,
        horizon,
        residual.min,
        violations.len()
    );
    if !violations.is_empty() {
        return Err(Failure::Violations { count: violations.len(), report: path });
    }
    Ok(())
}

fn find_diagnostics(dir: &Path) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "diagnostics.csv")
        .map(|e| e.into_path())
        .collect();
    found.sort();
    found
}

fn report(ctx: &Ctx, inputs: &[PathBuf]) -> std::result::Result<(), Failure> {
    let files = if inputs.is_empty() { find_diagnostics(&ctx.cli.out) } else { inputs.to_vec() };
    if files.is_empty() {
        return Err(CoagError::Argument(format!("no diagnostics.csv found under {}", ctx.cli.out.display())).into());
    }
    let columns: Vec<&str> = DIAGNOSTICS_HEADER.split(',').collect();
    let mut out = String::from("run,");
    out.push_str(DIAGNOSTICS_HEADER);
    out.push_str(",mass_loss,ledger_drift\n");
    let mut rows = 0;
    for file in &files {
        let run = file
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned());
        let mut rdr = csv::Reader::from_path(file).map_err(|e| CoagError::Io(format!("{}: {e}", file.display())))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CoagError::Format(format!("{}: {e}", file.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != columns {
            return Err(CoagError::Format(format!("{}: expected columns {DIAGNOSTICS_HEADER}", file.display())).into());
        }
        let mut first: Option<Vec<f64>> = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CoagError::Format(format!("{}: {e}", file.display())))?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| CoagError::Format(format!("{}: {e}", file.display())))?;
            let f0 = first.get_or_insert_with(|| vals.clone());
            // Columns: time, mass, number, overflow, boundary_flux, gel_mass, fitted_C.
            let m0 = f0[1];
            let loss = (m0 - (vals[1] - vals[5])) / m0;
            let drift = (m0 + f0[3] + f0[4] - (vals[1] + vals[3] + vals[4])) / m0;
            let _ = write!(out, "{run}");
            for v in &vals {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{loss},{drift}");
            rows += 1;
        }
    }
    let path = ctx.cli.out.join("report.csv");
    fs::write(&path, out)?;
    println!("report: {} file(s), {rows} row(s) -> {}", files.len(), path.display());
    Ok(())
}

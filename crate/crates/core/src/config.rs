//! `key = value` run configuration.
//!
//! Keys live in dotted sections (`grid.nx`, `solver.dt`, ...). Blank lines
//! and text after `#` are ignored. Every key has a default; the resolved
//! set of keys is hashed so that reordering the file does not change the
//! hash, while a change of default does.
//!
//! | key | default |
//! |---|---|
//! | `kernel.type` | `rain` (`rain`, `sum`, `constant`, `zero`) |
//! | `kernel.gamma` | `1.5` (sum kernel) |
//! | `kernel.c` | `1` (constant kernel) |
//! | `kernel.truncate_n` | none |
//! | `grid.x_min`, `grid.x_max`, `grid.nx` | `-4`, `6`, `128` |
//! | `grid.v_min`, `grid.v_max`, `grid.nv` | `0.01`, `100`, `128` |
//! | `initial.profile` | `algebraic` (`algebraic`, `exponential`) |
//! | `initial.c0`, `initial.m`, `initial.alpha` | `0.1`, `8`, `0.6666666666666666` |
//! | `initial.amplitude` | `1` |
//! | `solver.mode` | `mild_picard` |
//! | `solver.T`, `solver.dt` | `0.05`, `0.0025` |
//! | `solver.picard_tol`, `solver.picard_max_iters` | `1e-10`, `30` |
//! | `solver.output_dt` | `0` (every step) |
//! | `solver.verified_horizon` | none |
//! | `solver.gel_volume` | none (`N/2`) |
//! | `supersolution.delta` | `0.25` |
//! | `supersolution.L`, `supersolution.R`, `supersolution.lambda` | none (fitted) |
//! | `supersolution.samples`, `supersolution.seed` | `1000`, `7` |

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CoagError, Result};
use crate::grid::{GridSpec, InitialData};
use crate::kernels::{truncate_kernel, KernelSpec};
use crate::solver::{ApproxParams, Mode, Profile, RunConfig};

const KEYS: &[&str] = &[
    "kernel.type",
    "kernel.gamma",
    "kernel.c",
    "kernel.truncate_n",
    "grid.x_min",
    "grid.x_max",
    "grid.nx",
    "grid.v_min",
    "grid.v_max",
    "grid.nv",
    "initial.profile",
    "initial.c0",
    "initial.m",
    "initial.alpha",
    "initial.amplitude",
    "solver.mode",
    "solver.T",
    "solver.dt",
    "solver.picard_tol",
    "solver.picard_max_iters",
    "solver.output_dt",
    "solver.verified_horizon",
    "solver.gel_volume",
    "supersolution.delta",
    "supersolution.L",
    "supersolution.R",
    "supersolution.lambda",
    "supersolution.samples",
    "supersolution.seed",
];

/// Values for the supersolution checks; `None` means "fit it".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupersolutionOverrides {
    pub delta: f64,
    pub l: Option<f64>,
    pub r: Option<f64>,
    pub lambda: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedConfig {
    pub run: RunConfig,
    pub supersolution: SupersolutionOverrides,
    /// Every key with its resolved value.
    pub resolved: BTreeMap<String, String>,
    pub hash: String,
}

struct Reader {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Reader {
    fn text(&mut self, key: &str, default: &str) -> String {
        let v = self.raw.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let s = self.text(key, &default.to_string());
        let v: f64 = s
            .parse()
            .map_err(|_| CoagError::config(key, format!("expected a number, got `{s}`")))?;
        if !v.is_finite() {
            return Err(CoagError::config(key, format!("expected a finite number, got `{s}`")));
        }
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        if self.raw.contains_key(key) {
            Ok(Some(self.f64(key, 0.0)?))
        } else {
            self.resolved.insert(key.to_string(), "none".into());
            Ok(None)
        }
    }

    fn int<T: std::str::FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        let s = self.text(key, &default.to_string());
        s.parse()
            .map_err(|_| CoagError::config(key, format!("expected a non-negative integer, got `{s}`")))
    }
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig> {
    let mut raw = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CoagError::Format(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(CoagError::config(k, "unknown key"));
        }
        if raw.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CoagError::config(k, "key given twice"));
        }
    }
    let mut r = Reader { raw, resolved: BTreeMap::new() };

    let alpha = r.f64("initial.alpha", 2.0 / 3.0)?;
    let ktype = r.text("kernel.type", "rain");
    let gamma_given = r.raw.contains_key("kernel.gamma");
    let gamma = r.f64("kernel.gamma", 1.5)?;
    if gamma_given && !(gamma >= 0.0 && gamma < 1.0 + alpha) {
        return Err(CoagError::config(
            "kernel.gamma",
            format!("requires gamma in [0, 1+alpha) = [0, {}), got {gamma}", 1.0 + alpha),
        ));
    }
    let c = r.f64("kernel.c", 1.0)?;
    let mut kernel = match ktype.as_str() {
        "rain" => {
            if gamma_given {
                return Err(CoagError::config("kernel.gamma", "the rain kernel fixes gamma = alpha + 2/3"));
            }
            KernelSpec::rain(alpha)?
        }
        "sum" => KernelSpec::sum(gamma)?,
        "constant" => KernelSpec::constant(c)?,
        "zero" => KernelSpec::zero(),
        other => {
            return Err(CoagError::config(
                "kernel.type",
                format!("expected rain, sum, constant or zero, got `{other}`"),
            ))
        }
    };
    if let Some(n) = r.opt_f64("kernel.truncate_n")? {
        kernel = truncate_kernel(&kernel, n).map_err(|e| CoagError::config("kernel.truncate_n", e.to_string()))?;
    }

    let grid = GridSpec {
        x_min: r.f64("grid.x_min", -4.0)?,
        x_max: r.f64("grid.x_max", 6.0)?,
        nx: r.int("grid.nx", 128usize)?,
        v_min: r.f64("grid.v_min", 1e-2)?,
        v_max: r.f64("grid.v_max", 1e2)?,
        nv: r.int("grid.nv", 128usize)?,
    };

    let profile = match r.text("initial.profile", "algebraic").as_str() {
        "algebraic" => Profile::Algebraic,
        "exponential" => Profile::Exponential { amplitude: r.f64("initial.amplitude", 1.0)? },
        other => {
            return Err(CoagError::config(
                "initial.profile",
                format!("expected algebraic or exponential, got `{other}`"),
            ))
        }
    };
    if !matches!(profile, Profile::Exponential { .. }) {
        r.f64("initial.amplitude", 1.0)?;
    }
    let c0 = r.f64("initial.c0", 0.1)?;
    let m: u32 = r.int("initial.m", 8u32)?;
    let initial = InitialData::new(c0, m, alpha, kernel.gamma)?;

    let mode = match r.text("solver.mode", "mild_picard").as_str() {
        "mild_picard" => Mode::MildPicard,
        "operator_split" => Mode::OperatorSplit,
        "homogeneous" => Mode::Homogeneous,
        "approximate_transport" => Mode::ApproximateTransport,
        other => {
            return Err(CoagError::config(
                "solver.mode",
                format!("expected mild_picard, operator_split, homogeneous or approximate_transport, got `{other}`"),
            ))
        }
    };
    if mode != Mode::Homogeneous {
        grid.validate()?;
    }
    let horizon = r.f64("solver.T", 0.05)?;
    let dt = r.f64("solver.dt", 0.0025)?;
    let picard_tol = r.f64("solver.picard_tol", 1e-10)?;
    let picard_max_iters = r.int("solver.picard_max_iters", 30usize)?;
    let output_dt = r.f64("solver.output_dt", 0.0)?;
    let verified_horizon = r.opt_f64("solver.verified_horizon")?;
    let gel_volume = r.opt_f64("solver.gel_volume")?;

    let delta = r.f64("supersolution.delta", 0.25)?;
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(CoagError::config("supersolution.delta", "delta must lie in (0, 1/4]"));
    }
    let l = r.opt_f64("supersolution.L")?;
    let rr = r.opt_f64("supersolution.R")?;
    let lambda = r.opt_f64("supersolution.lambda")?;
    let samples = r.int("supersolution.samples", 1000usize)?;
    let seed = r.int("supersolution.seed", 7u64)?;

    let run = RunConfig {
        grid,
        kernel,
        initial,
        profile,
        horizon,
        dt,
        mode,
        picard_tol,
        picard_max_iters,
        output_dt,
        verified_horizon,
        approx: ApproxParams { l: l.unwrap_or(1.0), r: rr.unwrap_or(1.0) },
        gel_volume,
    };
    run.validate()?;
    let hash = hash_resolved(&r.resolved);
    Ok(ParsedConfig {
        run,
        supersolution: SupersolutionOverrides { delta, l, r: rr, lambda, samples, seed },
        resolved: r.resolved,
        hash,
    })
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CoagError::Format(format!("{} is not valid UTF-8", path.display())))?;
    parse_config_str(&text)
}

/// SHA-256 of the sorted `key=value` lines.
pub fn hash_resolved(resolved: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in resolved {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c.run.mode, Mode::MildPicard);
        assert_eq!(c.run.grid.nx, 128);
        assert_eq!(c.resolved.len(), KEYS.len());
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = parse_config_str("grid.nx = 64\nsolver.dt = 0.001\n").unwrap();
        let b = parse_config_str("# comment\nsolver.dt=0.001   # step\n\ngrid.nx=64\n").unwrap();
        assert_eq!(a.hash, b.hash);
        let c = parse_config_str("grid.nx = 65\nsolver.dt = 0.001\n").unwrap();
        assert_ne!(a.hash, c.hash);
        // An explicit default is the same configuration.
        assert_eq!(parse_config_str("grid.nx = 128").unwrap().hash, parse_config_str("").unwrap().hash);
    }

    #[test]
    fn rejections_name_the_key() {
        let e = parse_config_str("initial.m = 9").unwrap_err();
        assert!(matches!(&e, CoagError::Config { key, message } if key == "initial.m" && message.contains("m even")));
        let e = parse_config_str("kernel.type = sum\nkernel.gamma = 1.6666666666666667").unwrap_err();
        assert!(matches!(&e, CoagError::Config { key, message } if key == "kernel.gamma" && message.contains("[0, 1+alpha)")));
        let e = parse_config_str("grid.nz = 3").unwrap_err();
        assert!(matches!(&e, CoagError::Config { key, .. } if key == "grid.nz"));
        let e = parse_config_str("grid.nx = many").unwrap_err();
        assert!(matches!(&e, CoagError::Config { key, .. } if key == "grid.nx"));
        assert!(parse_config_str("solver.dt = 0").is_err());
        assert!(parse_config_str("grid.nx 5").is_err());
    }
}

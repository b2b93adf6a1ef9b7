//! Coagulation kernels and sampled checks of the structural assumptions
//! (symmetry, growth bound `K ≤ K₁(v^γ+v'^γ)`, and `K(v−v',v') ≤ K(v,v')`).

use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelKind {
    /// `|v^α − v'^α| (v^{1/3} + v'^{1/3})²`
    Rain { alpha: f64 },
    /// `v^γ + v'^γ`
    Sum { gamma: f64 },
    Constant { c: f64 },
    /// `K(v,v')·χ_N(v+v')`
    Truncated { inner: Box<KernelSpec>, n: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Homogeneity exponent.
    pub gamma: f64,
    /// Constant of the growth bound.
    pub k1: f64,
}

/// Anything evaluable as a kernel on positive volumes. Lets the assumption
/// checker run on ad-hoc (possibly invalid) kernels.
pub trait Kernel {
    fn value(&self, v: f64, vp: f64) -> f64;
}

impl Kernel for KernelSpec {
    #[inline]
    fn value(&self, v: f64, vp: f64) -> f64 {
        self.eval_unchecked(v, vp)
    }
}

impl<F: Fn(f64, f64) -> f64> Kernel for F {
    #[inline]
    fn value(&self, v: f64, vp: f64) -> f64 {
        self(v, vp)
    }
}

/// Linear ramp: 1 below `n/2`, 0 above `n`.
#[inline]
pub fn chi(n: f64, s: f64) -> f64 {
    if s <= 0.5 * n {
        1.0
    } else if s >= n {
        0.0
    } else {
        2.0 * (n - s) / n
    }
}

impl KernelSpec {
    /// Rain kernel. The bound constant is the crude `K₁ = 4`.
    pub fn rain(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CoagError::config("kernel.alpha", "alpha must lie in (0,1)"));
        }
        Ok(Self {
            kind: KernelKind::Rain { alpha },
            gamma: alpha + 2.0 / 3.0,
            k1: 4.0,
        })
    }

    pub fn sum(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(CoagError::config("kernel.gamma", "gamma must be finite and >= 0"));
        }
        Ok(Self {
            kind: KernelKind::Sum { gamma },
            gamma,
            k1: 1.0,
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(CoagError::config("kernel.c", "rate must be finite and >= 0"));
        }
        Ok(Self {
            kind: KernelKind::Constant { c },
            gamma: 0.0,
            k1: c / 2.0,
        })
    }

    pub fn zero() -> Self {
        Self::constant(0.0).unwrap()
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            KernelKind::Constant { c } => *c == 0.0,
            KernelKind::Truncated { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }

    /// Kernel value with domain checks.
    pub fn eval(&self, v: f64, vp: f64) -> Result<f64> {
        if !(v > 0.0 && vp > 0.0) || !v.is_finite() || !vp.is_finite() {
            return Err(CoagError::Domain(format!(
                "kernel needs positive finite volumes, got ({v}, {vp})"
            )));
        }
        Ok(self.eval_unchecked(v, vp))
    }

    #[inline]
    pub fn eval_unchecked(&self, v: f64, vp: f64) -> f64 {
        match &self.kind {
            KernelKind::Rain { alpha } => {
                let s = v.cbrt() + vp.cbrt();
                (v.powf(*alpha) - vp.powf(*alpha)).abs() * s * s
            }
            KernelKind::Sum { gamma } => {
                if *gamma == 1.0 {
                    v + vp
                } else {
                    v.powf(*gamma) + vp.powf(*gamma)
                }
            }
            KernelKind::Constant { c } => *c,
            KernelKind::Truncated { inner, n } => {
                let w = chi(*n, v + vp);
                if w == 0.0 {
                    0.0
                } else {
                    w * inner.eval_unchecked(v, vp)
                }
            }
        }
    }

    /// The rain exponent when this is (a truncation of) a rain kernel.
    pub fn rain_alpha(&self) -> Option<f64> {
        match &self.kind {
            KernelKind::Rain { alpha } => Some(*alpha),
            KernelKind::Truncated { inner, .. } => inner.rain_alpha(),
            _ => None,
        }
    }
}

/// `K_N(v,v') = K(v,v')·χ_N(v+v')`.
pub fn truncate_kernel(k: &KernelSpec, n: f64) -> Result<KernelSpec> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(CoagError::Argument(format!(
            "truncation volume must exceed 1, got {n}"
        )));
    }
    Ok(KernelSpec {
        kind: KernelKind::Truncated {
            inner: Box::new(k.clone()),
            n,
        },
        gamma: k.gamma,
        k1: k.k1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Symmetry,
    Negative,
    Bound,
    Monotonicity,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationRecord {
    pub kind: Violation,
    pub v: f64,
    pub vp: f64,
    /// Positive amount by which the inequality fails.
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub gamma: f64,
    pub k1: f64,
    pub samples: usize,
    pub violations: Vec<ViolationRecord>,
    /// Largest observed `K / (v^γ + v'^γ)`, i.e. the tightest K₁ on the sample.
    pub observed_k1: f64,
}

impl AssumptionReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: Violation) -> usize {
        self.violations.iter().filter(|r| r.kind == kind).count()
    }
}

const SLACK: f64 = 1e-12;

pub fn check_assumption(k: &KernelSpec, samples: &[(f64, f64)]) -> Result<AssumptionReport> {
    check_assumption_with(k, k.gamma, k.k1, samples)
}

/// Sampled check of symmetry, nonnegativity, the growth bound and the
/// monotonicity `K(v−v',v') ≤ K(v,v')` for `v' ≤ v/2`.
pub fn check_assumption_with<K: Kernel + ?Sized>(
    k: &K,
    gamma: f64,
    k1: f64,
    samples: &[(f64, f64)],
) -> Result<AssumptionReport> {
    if samples.is_empty() {
        return Err(CoagError::Argument("empty sample set".into()));
    }
    let mut violations = Vec::new();
    let mut observed_k1: f64 = 0.0;
    for &(v, vp) in samples {
        if !(v > 0.0 && vp > 0.0) {
            return Err(CoagError::Domain(format!("non-positive sample ({v}, {vp})")));
        }
        let a = k.value(v, vp);
        let b = k.value(vp, v);
        let scale = a.abs().max(b.abs());
        if (a - b).abs() > SLACK * scale {
            violations.push(ViolationRecord { kind: Violation::Symmetry, v, vp, excess: (a - b).abs() });
        }
        if a < 0.0 {
            violations.push(ViolationRecord { kind: Violation::Negative, v, vp, excess: -a });
        }
        let bound = v.powf(gamma) + vp.powf(gamma);
        observed_k1 = observed_k1.max(a / bound);
        if a > k1 * bound * (1.0 + SLACK) {
            violations.push(ViolationRecord { kind: Violation::Bound, v, vp, excess: a - k1 * bound });
        }
        let (big, small) = if v >= vp { (v, vp) } else { (vp, v) };
        if small <= 0.5 * big {
            let lhs = k.value(big - small, small);
            let rhs = k.value(big, small);
            if lhs > rhs + SLACK * rhs.abs().max(lhs.abs()) {
                violations.push(ViolationRecord {
                    kind: Violation::Monotonicity,
                    v: big,
                    vp: small,
                    excess: lhs - rhs,
                });
            }
        }
    }
    Ok(AssumptionReport {
        gamma,
        k1,
        samples: samples.len(),
        violations,
        observed_k1,
    })
}

/// Cartesian product of `n` log-spaced volumes in `[lo, hi]`.
pub fn log_pairs(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let vs = crate::numerics::logspace(lo, hi, n);
    let mut out = Vec::with_capacity(n * n);
    for &a in &vs {
        for &b in &vs {
            out.push((a, b));
        }
    }
    out
}

//! The (x, v) discretisation, density snapshots and the algebraic initial
//! datum `C₀/(1+|x|^m+v^p)`.

use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::numerics::pairwise_sum;

/// Uniform cells in x, geometric bins in v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub nv: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::with_ratio(-20.0, 20.0, 128, 1e-2, 1e2, 2f64.powf(0.125)).unwrap()
    }
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, nx: usize, v_min: f64, v_max: f64, nv: usize) -> Result<Self> {
        let g = Self { x_min, x_max, nx, v_min, v_max, nv };
        g.validate()?;
        Ok(g)
    }

    /// Bins of fixed ratio `r` from `v_min`; the upper bound is rounded up to
    /// a whole number of bins.
    pub fn with_ratio(x_min: f64, x_max: f64, nx: usize, v_min: f64, v_max: f64, r: f64) -> Result<Self> {
        if !(r > 1.0) {
            return Err(CoagError::config("grid.ratio", "geometric ratio must exceed 1"));
        }
        if !(v_max > v_min && v_min > 0.0) {
            return Err(CoagError::config("grid.v_max", "need 0 < v_min < v_max"));
        }
        let nv = ((v_max / v_min).ln() / r.ln() - 1e-9).ceil().max(2.0) as usize;
        Self::new(x_min, x_max, nx, v_min, v_min * r.powi(nv as i32), nv)
    }

    /// A single spatial cell, used by the homogeneous driver.
    pub fn single_column(v_min: f64, v_max: f64, nv: usize) -> Result<Self> {
        let g = Self { x_min: -0.5, x_max: 0.5, nx: 1, v_min, v_max, nv };
        g.validate_v()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return Err(CoagError::config("grid.x_max", "need finite x_min < x_max"));
        }
        if self.nx < 2 {
            return Err(CoagError::config("grid.nx", "need at least 2 cells"));
        }
        self.validate_v()
    }

    fn validate_v(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_max > self.v_min && self.v_max.is_finite()) {
            return Err(CoagError::config("grid.v_min", "need 0 < v_min < v_max"));
        }
        if self.nv < 2 {
            return Err(CoagError::config("grid.nv", "need at least 2 bins"));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, k: usize) -> usize {
        i * self.nv + k
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn ratio(&self) -> f64 {
        (self.v_max / self.v_min).powf(1.0 / self.nv as f64)
    }

    pub fn v_edge(&self, k: usize) -> f64 {
        if k == self.nv {
            return self.v_max;
        }
        self.v_min * (self.v_max / self.v_min).powf(k as f64 / self.nv as f64)
    }

    /// Geometric centre of bin `k`.
    pub fn v_center(&self, k: usize) -> f64 {
        self.v_min * (self.v_max / self.v_min).powf((k as f64 + 0.5) / self.nv as f64)
    }

    pub fn dv(&self, k: usize) -> f64 {
        self.v_edge(k + 1) - self.v_edge(k)
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_center(i)).collect()
    }

    pub fn v_centers(&self) -> Vec<f64> {
        (0..self.nv).map(|k| self.v_center(k)).collect()
    }

    pub fn v_widths(&self) -> Vec<f64> {
        (0..self.nv).map(|k| self.dv(k)).collect()
    }

    pub fn v_edges(&self) -> Vec<f64> {
        (0..=self.nv).map(|k| self.v_edge(k)).collect()
    }
}

/// Cell-averaged density `f(x, v, t)` with its bookkeeping ledgers.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub grid: GridSpec,
    /// Row-major: `values[i * nv + k]` is cell `i` in x, bin `k` in v.
    pub values: Vec<f64>,
    pub time: f64,
    /// Mass carried past the last volume pivot by coagulation.
    pub overflow_mass: f64,
    /// Mass carried across the spatial boundary by transport.
    pub boundary_flux: f64,
}

impl StateField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            time: 0.0,
            overflow_mass: 0.0,
            boundary_flux: 0.0,
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = grid.x_centers();
        let vs = grid.v_centers();
        let mut out = Self::zeros(grid);
        for (i, &x) in xs.iter().enumerate() {
            for (k, &v) in vs.iter().enumerate() {
                out.values[i * grid.nv + k] = f(x, v);
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.grid.nv + k]
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.values[i * self.grid.nv..(i + 1) * self.grid.nv]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        let nv = self.grid.nv;
        &mut self.values[i * nv..(i + 1) * nv]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }
}

/// Parameters of the algebraic initial datum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub c0: f64,
    pub m: u32,
    pub p: f64,
    pub alpha: f64,
}

impl InitialData {
    /// Validates `m` even, `m > max{(2γ+1)/α, 2/α+3}` and sets `p = α m`.
    pub fn new(c0: f64, m: u32, alpha: f64, gamma: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(CoagError::config("initial.c0", "C0 must be positive"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CoagError::config("initial.alpha", "alpha must lie in (0,1)"));
        }
        if !(gamma >= 0.0 && gamma < 1.0 + alpha) {
            return Err(CoagError::config(
                "kernel.gamma",
                format!("requires gamma in [0, 1+alpha) = [0, {}), got {gamma}", 1.0 + alpha),
            ));
        }
        if m % 2 != 0 {
            return Err(CoagError::config("initial.m", format!("m even required, got {m}")));
        }
        let bound = ((2.0 * gamma + 1.0) / alpha).max(2.0 / alpha + 3.0);
        if !(m as f64 > bound) {
            return Err(CoagError::config(
                "initial.m",
                format!("requires m > max{{(2gamma+1)/alpha, 2/alpha+3}} = {bound}, got {m}"),
            ));
        }
        Ok(Self { c0, m, p: alpha * m as f64, alpha })
    }

    /// Smallest admissible even `m` for the given exponents.
    pub fn minimal_m(alpha: f64, gamma: f64) -> u32 {
        let bound = ((2.0 * gamma + 1.0) / alpha).max(2.0 / alpha + 3.0);
        let mut m = bound.floor() as u32 + 1;
        if m % 2 == 1 {
            m += 1;
        }
        m
    }

    #[inline]
    pub fn eval(&self, x: f64, v: f64) -> f64 {
        self.c0 / (1.0 + x.abs().powi(self.m as i32) + v.powf(self.p))
    }

    /// The datum transported without coagulation: `f_in(x − v^α t, v)`.
    #[inline]
    pub fn transported(&self, x: f64, v: f64, t: f64) -> f64 {
        self.eval(x - v.powf(self.alpha) * t, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialProfile {
    Algebraic(InitialData),
    /// `A e^{−v}`, independent of x.
    Exponential { amplitude: f64 },
}

impl InitialProfile {
    #[inline]
    pub fn eval(&self, x: f64, v: f64) -> f64 {
        match self {
            InitialProfile::Algebraic(d) => d.eval(x, v),
            InitialProfile::Exponential { amplitude } => amplitude * (-v).exp(),
        }
    }
}

/// Midpoint-rule cell averages of the initial datum.
pub fn make_initial(d: &InitialData, g: &GridSpec) -> StateField {
    StateField::from_fn(*g, |x, v| d.eval(x, v))
}

pub fn make_profile(p: &InitialProfile, g: &GridSpec) -> StateField {
    StateField::from_fn(*g, |x, v| p.eval(x, v))
}

/// Bilinear interpolation in `(x, ln v)` between cell centres. Queries
/// outside the grid return 0; between the outer centre and the boundary the
/// edge value is held.
pub fn interpolate(f: &StateField, x: f64, v: f64) -> f64 {
    let g = &f.grid;
    if !(x >= g.x_min && x <= g.x_max && v >= g.v_min && v <= g.v_max) {
        return 0.0;
    }
    let (i0, i1, wx) = if g.nx == 1 {
        (0, 0, 0.0)
    } else {
        bracket((x - g.x_min) / g.dx() - 0.5, g.nx)
    };
    let s = (v / g.v_min).ln() / (g.v_max / g.v_min).ln() * g.nv as f64 - 0.5;
    let (k0, k1, wv) = bracket(s, g.nv);
    let a = f.get(i0, k0) * (1.0 - wv) + f.get(i0, k1) * wv;
    let b = f.get(i1, k0) * (1.0 - wv) + f.get(i1, k1) * wv;
    (a * (1.0 - wx) + b * wx).max(0.0)
}

/// Lower index, upper index and weight of the upper node for fractional
/// node coordinate `s` among `n` nodes, clamped at the ends.
#[inline]
pub(crate) fn bracket(s: f64, n: usize) -> (usize, usize, f64) {
    if s <= 0.0 {
        return (0, 0, 0.0);
    }
    let top = (n - 1) as f64;
    if s >= top {
        return (n - 1, n - 1, 0.0);
    }
    let lo = s.floor();
    let k = lo as usize;
    (k, k + 1, s - lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment {
    pub value: f64,
    /// Set when the order is beyond what the `v^{-p}` envelope integrates.
    pub exceeds_envelope: bool,
}

/// `Σ_k v_k^n f(x_i, v_k) Δv_k` in a fixed pairwise order.
pub fn moment(f: &StateField, n: f64, x_index: usize, envelope_p: Option<f64>) -> Moment {
    let g = &f.grid;
    let col = f.column(x_index);
    let terms: Vec<f64> = (0..g.nv)
        .map(|k| g.v_center(k).powf(n) * col[k] * g.dv(k))
        .collect();
    Moment {
        value: pairwise_sum(&terms),
        exceeds_envelope: envelope_p.is_some_and(|p| n > p - 2.0),
    }
}

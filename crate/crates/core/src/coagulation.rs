//! Fixed-pivot sectional coagulation on the geometric volume grid.
//!
//! Bin `k` carries number `N_k = f_k Δv_k` at its pivot `c_k`. A merger of
//! pivots `c_i + c_j` is split between the two bracketing pivots so that
//! number and mass are both preserved; sums beyond the last pivot are booked
//! to the overflow ledger.

use crate::error::{CoagError, Result};
use crate::grid::{GridSpec, StateField};
use crate::kernels::KernelSpec;
use crate::numerics::pairwise_sum;
use crate::par;

const OVERFLOW: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct CoagTables {
    pub nv: usize,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// `K(c_i, c_j)`, row-major.
    pub kernel: Vec<f64>,
    /// Lower target pivot of `c_i + c_j`, or `u32::MAX` for overflow.
    pub target: Vec<u32>,
    /// Share of the merger assigned to the lower target.
    pub w_lo: Vec<f64>,
}

/// Number/mass-preserving split of `s` between pivots `lo < hi`.
#[inline]
pub fn pivot_weights(s: f64, lo: f64, hi: f64) -> (f64, f64) {
    let w = (hi - s) / (hi - lo);
    (w, 1.0 - w)
}

pub fn build_tables(g: &GridSpec, k: &KernelSpec) -> CoagTables {
    let nv = g.nv;
    let centers = g.v_centers();
    let widths = g.v_widths();
    let mut kernel = vec![0.0; nv * nv];
    let mut target = vec![OVERFLOW; nv * nv];
    let mut w_lo = vec![0.0; nv * nv];
    let last = centers[nv - 1];
    for i in 0..nv {
        for j in 0..nv {
            let idx = i * nv + j;
            // Evaluate on the ordered pair (max, min) so the table is exactly symmetric.
            let (a, b) = if i >= j { (i, j) } else { (j, i) };
            kernel[idx] = k.eval_unchecked(centers[a], centers[b]);
            let s = centers[a] + centers[b];
            if s > last {
                continue;
            }
            if s == last {
                target[idx] = (nv - 1) as u32;
                w_lo[idx] = 1.0;
                continue;
            }
            // First pivot strictly above s; s > c_a so the search starts there.
            let hi = a + centers[a..].partition_point(|&c| c <= s);
            let lo = hi - 1;
            target[idx] = lo as u32;
            w_lo[idx] = if centers[lo] == s {
                1.0
            } else {
                pivot_weights(s, centers[lo], centers[hi]).0
            };
        }
    }
    CoagTables { nv, centers, widths, kernel, target, w_lo }
}

impl CoagTables {
    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.nv + j]
    }

    /// Number per bin, `f_k Δv_k`.
    pub fn numbers(&self, col: &[f64]) -> Vec<f64> {
        col.iter().zip(&self.widths).map(|(f, w)| f * w).collect()
    }

    /// `a[f](c_k) = Σ_j K(c_k, c_j) f_j Δv_j` for every bin.
    pub fn loss_rates(&self, col: &[f64]) -> Vec<f64> {
        let n = self.numbers(col);
        (0..self.nv)
            .map(|k| {
                let row = &self.kernel[k * self.nv..(k + 1) * self.nv];
                let terms: Vec<f64> = row.iter().zip(&n).map(|(a, b)| a * b).collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    /// Gain density of the bilinear form `½ Σ_{i,j} K_ij G_i H_j` (numbers
    /// `G = gΔv`, `H = hΔv`), visited by unordered pairs and added into
    /// `out`. Returns the mass rate booked to overflow.
    ///
    /// With `g == h` this is the usual quadratic gain `½ Σ_{i,j} K_ij N_i N_j`.
    pub fn gain_bilinear(&self, g: &[f64], h: &[f64], out: &mut [f64]) -> f64 {
        let ng = self.numbers(g);
        let nh = self.numbers(h);
        let nv = self.nv;
        let mut number = vec![0.0; nv];
        let mut overflow = 0.0;
        for i in 0..nv {
            for j in 0..=i {
                let idx = i * nv + j;
                let kk = self.kernel[idx];
                if kk == 0.0 {
                    continue;
                }
                // Unordered pair: ordered contributions (i,j) and (j,i), each with ½.
                let rate = if i == j {
                    0.5 * kk * (ng[i] * nh[i])
                } else {
                    0.5 * kk * (ng[i] * nh[j] + ng[j] * nh[i])
                };
                if rate == 0.0 {
                    continue;
                }
                self.deposit(idx, rate, &mut number, &mut overflow, i, j);
            }
        }
        for k in 0..nv {
            out[k] += number[k] / self.widths[k];
        }
        overflow
    }

    #[inline]
    fn deposit(&self, idx: usize, rate: f64, number: &mut [f64], overflow: &mut f64, i: usize, j: usize) {
        let t = self.target[idx];
        if t == OVERFLOW {
            *overflow += rate * (self.centers[i] + self.centers[j]);
        } else {
            let lo = t as usize;
            let w = self.w_lo[idx];
            number[lo] += w * rate;
            if w < 1.0 {
                number[lo + 1] += (1.0 - w) * rate;
            }
        }
    }

    /// Quadratic gain by the half loop `j ≤ i` with doubled off-diagonal terms.
    pub fn gain_half(&self, col: &[f64], out: &mut [f64]) -> f64 {
        let n = self.numbers(col);
        let nv = self.nv;
        let mut number = vec![0.0; nv];
        let mut overflow = 0.0;
        for i in 0..nv {
            for j in 0..=i {
                let idx = i * nv + j;
                let p = self.kernel[idx] * (n[i] * n[j]);
                let rate = if i == j { 0.5 * p } else { p };
                if rate != 0.0 {
                    self.deposit(idx, rate, &mut number, &mut overflow, i, j);
                }
            }
        }
        for k in 0..nv {
            out[k] += number[k] / self.widths[k];
        }
        overflow
    }

    /// Quadratic gain by the full ordered loop, each unordered pair visited
    /// once as the sum of its two ordered halves. Reference for [`Self::gain_half`].
    pub fn gain_full(&self, col: &[f64], out: &mut [f64]) -> f64 {
        let n = self.numbers(col);
        let nv = self.nv;
        let mut number = vec![0.0; nv];
        let mut overflow = 0.0;
        for i in 0..nv {
            for j in 0..nv {
                if j > i {
                    continue;
                }
                let p_ij = 0.5 * (self.k(i, j) * (n[i] * n[j]));
                let p_ji = 0.5 * (self.k(j, i) * (n[j] * n[i]));
                let rate = if i == j { p_ij } else { p_ij + p_ji };
                if rate != 0.0 {
                    self.deposit(i * nv + j, rate, &mut number, &mut overflow, i, j);
                }
            }
        }
        for k in 0..nv {
            out[k] += number[k] / self.widths[k];
        }
        overflow
    }

    /// Right-hand side `gain − f·a[f]` of one column; returns the overflow mass rate.
    pub fn rhs(&self, col: &[f64], out: &mut [f64]) -> f64 {
        out.fill(0.0);
        let overflow = self.gain_half(col, out);
        let a = self.loss_rates(col);
        for k in 0..self.nv {
            out[k] -= col[k] * a[k];
        }
        overflow
    }

    /// Largest loss rate over populated bins of a column.
    pub fn max_loss_rate(&self, col: &[f64]) -> f64 {
        let a = self.loss_rates(col);
        a.iter()
            .zip(col)
            .filter(|(_, f)| **f > 0.0)
            .fold(0.0f64, |m, (a, _)| m.max(*a))
    }

    pub fn column_mass(&self, col: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.nv).map(|k| self.centers[k] * col[k] * self.widths[k]).collect();
        pairwise_sum(&terms)
    }
}

/// `a[f](x_i, v_k)`.
pub fn loss_rate(f: &StateField, tables: &CoagTables, x_index: usize, v_index: usize) -> f64 {
    let col = f.column(x_index);
    let terms: Vec<f64> = (0..tables.nv)
        .map(|j| tables.k(v_index, j) * col[j] * tables.widths[j])
        .collect();
    pairwise_sum(&terms)
}

/// Positivity bound `0.5 / max a[f]` over populated cells.
pub fn stability_bound(f: &StateField, tables: &CoagTables) -> f64 {
    let nx = f.grid.nx;
    let m = par::map_indexed(nx, |i| tables.max_loss_rate(f.column(i)))
        .into_iter()
        .fold(0.0f64, f64::max);
    if m > 0.0 {
        0.5 / m
    } else {
        f64::INFINITY
    }
}

/// Explicit Euler coagulation step on every column.
pub fn apply_coagulation(f: &StateField, tables: &CoagTables, dt: f64) -> Result<StateField> {
    let bound = stability_bound(f, tables);
    if dt > bound {
        return Err(CoagError::Stability { dt, bound });
    }
    Ok(euler_step(f, tables, dt))
}

/// Euler step without the bound check (callers guarantee it).
pub(crate) fn euler_step(f: &StateField, tables: &CoagTables, dt: f64) -> StateField {
    let g = f.grid;
    let dx = if g.nx == 1 { 1.0 } else { g.dx() };
    let cols = par::map_indexed(g.nx, |i| {
        let col = f.column(i);
        let mut r = vec![0.0; g.nv];
        let ov = tables.rhs(col, &mut r);
        let new: Vec<f64> = col.iter().zip(&r).map(|(f, r)| (f + dt * r).max(0.0)).collect();
        (new, ov * dt * dx)
    });
    let mut out = f.clone();
    let mut ov = Vec::with_capacity(g.nx);
    for (i, (c, o)) in cols.into_iter().enumerate() {
        out.column_mut(i).copy_from_slice(&c);
        ov.push(o);
    }
    out.overflow_mass += pairwise_sum(&ov);
    out.time += dt;
    out
}

use crate::grid::StateField;

/// Integer cell shift and fractional remainder of a displacement, with
/// near-integer displacements snapped so that they move values exactly.
#[inline]
pub(crate) fn split_shift(cells: f64) -> (usize, f64) {
    let r = cells.round();
    let s = if (cells - r).abs() < 1e-9 { r } else { cells };
    let n = s.floor();
    (n as usize, s - n)
}

/// Shifts every volume bin right by `v^α dt` with conservative linear
/// interpolation. Content leaving through `x_max` is added to the boundary
/// ledger (mass units); nothing enters through `x_min`.
pub fn transport_step(f: &StateField, alpha: f64, dt: f64) -> StateField {
    let g = f.grid;
    let dx = g.dx();
    let mut out = f.clone();
    out.time += dt;
    let mut outflow = 0.0;
    for k in 0..g.nv {
        let v = g.v_center(k);
        let (n, theta) = split_shift(v.powf(alpha) * dt / dx);
        let weight = v * g.dv(k) * dx;
        for i in 0..g.nx {
            let a = if i >= n { f.get(i - n, k) } else { 0.0 };
            let b = if i > n { f.get(i - n - 1, k) } else { 0.0 };
            out.values[g.idx(i, k)] = if theta == 0.0 { a } else { (1.0 - theta) * a + theta * b };
        }
        let mut lost = 0.0;
        for j in 0..g.nx {
            let val = f.get(j, k);
            if j + n >= g.nx {
                lost += val;
            } else if j + n + 1 >= g.nx {
                lost += theta * val;
            }
        }
        outflow += lost * weight;
    }
    out.boundary_flux += outflow;
    out
}

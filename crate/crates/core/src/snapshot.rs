//! Snapshot files: one JSON header line, then a CSV body
//! `x_index,v_index,x_center,v_center,value`. Floats are written in Rust's
//! shortest round-trip form, so reading a snapshot back is bit-exact.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::grid::{GridSpec, StateField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub grid: GridSpec,
    pub time: f64,
    pub overflow_mass: f64,
    pub boundary_flux: f64,
    pub config_hash: String,
}

const COLUMNS: &str = "x_index,v_index,x_center,v_center,value";

pub fn write_snapshot(f: &StateField, config_hash: &str) -> String {
    let header = SnapshotHeader {
        grid: f.grid,
        time: f.time,
        overflow_mass: f.overflow_mass,
        boundary_flux: f.boundary_flux,
        config_hash: config_hash.to_string(),
    };
    let g = &f.grid;
    let mut out = String::with_capacity(48 * g.len() + 256);
    out.push_str(&serde_json::to_string(&header).expect("header serialises"));
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    let xs = g.x_centers();
    let vs = g.v_centers();
    for i in 0..g.nx {
        for k in 0..g.nv {
            let _ = writeln!(out, "{i},{k},{},{},{}", xs[i], vs[k], f.get(i, k));
        }
    }
    out
}

pub fn read_snapshot(text: &str) -> Result<(StateField, String)> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| CoagError::Format("empty snapshot".into()))?;
    let header: SnapshotHeader =
        serde_json::from_str(head).map_err(|e| CoagError::Format(format!("header: {e}")))?;
    if lines.next() != Some(COLUMNS) {
        return Err(CoagError::Format("missing CSV column header".into()));
    }
    let g = header.grid;
    let mut values = vec![f64::NAN; g.len()];
    let mut seen = 0usize;
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let mut field = |name: &str| {
            it.next()
                .ok_or_else(|| CoagError::Format(format!("row {n}: missing {name}")))
        };
        let i: usize = parse(field("x_index")?, n)?;
        let k: usize = parse(field("v_index")?, n)?;
        let _x: f64 = parse(field("x_center")?, n)?;
        let _v: f64 = parse(field("v_center")?, n)?;
        let val: f64 = parse(field("value")?, n)?;
        if i >= g.nx || k >= g.nv {
            return Err(CoagError::Format(format!("row {n}: index out of range")));
        }
        values[g.idx(i, k)] = val;
        seen += 1;
    }
    if seen != g.len() || values.iter().any(|v| v.is_nan()) {
        return Err(CoagError::Format(format!(
            "expected {} rows, got {seen}",
            g.len()
        )));
    }
    Ok((
        StateField {
            grid: g,
            values,
            time: header.time,
            overflow_mass: header.overflow_mass,
            boundary_flux: header.boundary_flux,
        },
        header.config_hash,
    ))
}

fn parse<T: std::str::FromStr>(s: &str, row: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| CoagError::Format(format!("row {row}: cannot parse `{s}`")))
}

/// The CSV body only (everything after the header line).
pub fn body(snapshot: &str) -> &str {
    snapshot.split_once('\n').map(|(_, b)| b).unwrap_or("")
}

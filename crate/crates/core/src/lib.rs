//! Simulator and verification harness for the inhomogeneous coagulation
//! equation with sedimentation transport,
//!
//! ```text
//! ∂t f + v^α ∂x f = ½∫₀^v K(v−v',v') f(v−v') f(v') dv' − ∫₀^∞ K(v,v') f(v) f(v') dv'.
//! ```
//!
//! The crate is organised bottom-up: [`kernels`] and [`grid`] define the
//! data model, [`coagulation`] the discrete operator, [`characteristics`]
//! and [`supersolution`] the analytic majorant machinery, [`solver`] the
//! time drivers and [`diagnostics`] the conserved-quantity checks.

pub mod characteristics;
pub mod coagulation;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod numerics;
pub mod par;
pub mod snapshot;
pub mod solver;
pub mod supersolution;

pub use error::{CoagError, Result};
pub use grid::{GridSpec, InitialData, InitialProfile, StateField};
pub use kernels::KernelSpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use thiserror::Error;

/// Errors raised by the simulator and the verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoagError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("integration failed at t={t:.6e}: {message} (last state {state:?})")]
    Integration {
        t: f64,
        state: Vec<f64>,
        message: String,
    },

    #[error("time step {dt:.6e} exceeds the positivity bound {bound:.6e}")]
    Stability { dt: f64, bound: f64 },

    #[error("horizon exceeded: t={t:.6e} > T_max={t_max:.6e} (requires max(T, T^c_alpha) <= ln2/(2 lambda))")]
    Horizon { t: f64, t_max: f64 },

    #[error("search failed: {0}")]
    Search(String),

    #[error("fixed point did not converge: {0}")]
    Iteration(String),

    #[error("Picard iteration is not contracting ({0}); try a smaller horizon T")]
    NonContraction(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl CoagError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CoagError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CoagError {
    fn from(e: std::io::Error) -> Self {
        CoagError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoagError>;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no interior equilibrium for v* = {v_star} (admissible range [0, {v_max}))")]
    NoInteriorEquilibrium { v_star: f64, v_max: f64 },

    #[error("equilibrium gap {gap} sits on a kink of the range policy; derivative undefined")]
    RangePolicyKink { gap: f64 },

    #[error("state vector of length {0} does not describe a platoon (expected 2N+4 with N >= 1)")]
    StateLength(usize),

    #[error("zero polynomial has no roots")]
    ZeroPolynomial,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("quadratic program is infeasible: {0}")]
    QpInfeasible(String),

    #[error("quadratic program did not converge after {iterations} iterations")]
    QpIterationLimit { iterations: usize },

    #[error("non-finite state at t = {t:.3} s: {detail}")]
    NonFiniteState { t: f64, detail: String },

    #[error("index not applicable: leader speed perturbation has zero energy")]
    IndexNotApplicable,

    #[error(
        "config error{}: {message}",
        if path.is_empty() { String::new() } else { format!(" at `{path}`") }
    )]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

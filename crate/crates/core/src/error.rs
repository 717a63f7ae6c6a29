use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("relay time went backwards: {t} < {last}")]
    NonMonotoneTime { t: f64, last: f64 },

    #[error("state is outside the active region of the relay (signed distance {distance:e})")]
    InconsistentRelay { distance: f64 },

    #[error("event detection failed: {0}")]
    Detection(String),

    #[error("no switching before t = {t_max}")]
    NoCrossing { t_max: f64 },

    #[error("repeated switchings closer than the dwell floor {dwell_floor:e} near t = {t}")]
    ZenoSuspected { t: f64, dwell_floor: f64 },

    #[error("linearization is degenerate: Q(s) = {q:e}")]
    DegenerateLinearization { q: f64 },

    #[error("eigenvalue iteration did not converge after {iterations} sweeps")]
    NoConvergence { iterations: usize },

    #[error("Poincare map is not differentiable here: coordinate {coordinate}, step sign {sign}: {reason}")]
    NonDifferentiable {
        coordinate: usize,
        sign: i8,
        reason: String,
    },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("perturbed orbit diverged although the solution was classified stable")]
    Divergence,
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("truncation tail mass {tail_mass:.3e} exceeds {threshold:.1e} ({what})")]
    Truncation {
        what: String,
        tail_mass: f64,
        threshold: f64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("point lies inside or on a magnet: {0}")]
    Domain(String),

    #[error("no stable equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("analytic/numeric cross-check failed: max infidelity {max_infidelity:.3e} > {bound:.1e}")]
    CrossCheck { max_infidelity: f64, bound: f64 },

    #[error("ancilla truncation leakage {leakage:.3e} > {bound:.1e}; increase ancilla_dim")]
    AncillaLeakage { leakage: f64, bound: f64 },

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("derivative step rejected: {0}")]
    DerivativeStep(String),

    #[error("Fisher information is zero: variance bound is unbounded")]
    UnboundedVariance,
}

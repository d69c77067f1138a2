use num_complex::Complex64;
use thiserror::Error;

use crate::spectral::Regime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("argument component {index} is negative ({value}); mechanisms are defined on the non-negative orthant")]
    NegativeArgument { index: usize, value: f64 },

    #[error("Riccati flow left the non-negative orthant at t={time} (component {component} = {value}); reduce the ODE step")]
    OdeLeftOrthant {
        time: f64,
        component: usize,
        value: f64,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("simulated state became non-finite on path {path_index} at t={time}; dt is too large for the jump and growth rates")]
    NonFiniteState { path_index: u64, time: f64 },

    #[error("eigensolver failed to converge")]
    EigenSolver,

    #[error("matrix is reducible; the Perron pair is not uniquely normalizable")]
    Reducible,

    #[error("{target} is not an eigenvalue (closest eigenvalue at distance {distance:e})")]
    NotAnEigenvalue { target: Complex64, distance: f64 },

    #[error("eigenvalue {lambda} is not simple (algebraic multiplicity {algebraic}, geometric multiplicity {geometric})")]
    MultipleEigenvalue {
        lambda: Complex64,
        algebraic: usize,
        geometric: usize,
    },

    #[error("process is not supercritical (s = {s})")]
    NotSupercritical { s: f64 },

    #[error("operation requires regime {expected}, eigenvalue is in regime {found:?}")]
    RegimeMismatch {
        expected: &'static str,
        found: Regime,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("covariance matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("perpetuity coefficient has spectral radius {0} >= 1")]
    NotContracting(f64),

    #[error("perpetuity coefficient is singular")]
    SingularCoefficient,

    #[error("{requested} series terms leave a tail bound of {bound:e}; at least {required} are needed")]
    TooFewTerms {
        requested: usize,
        required: usize,
        bound: f64,
    },

    #[error("path has no jump log; simulate with jump logging enabled")]
    MissingJumpLog,

    #[error("path was not recorded on the full grid")]
    MissingGrid,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

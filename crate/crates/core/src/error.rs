use thiserror::Error;

/// Errors raised by the numerical kernels and the filters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite after diagonal jitter up to {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e}, max |eigenvalue| {max_abs_eigenvalue:e}")]
    NotPsd {
        min_eigenvalue: f64,
        max_abs_eigenvalue: f64,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("inflation factor must be >= 1, got {0}")]
    InvalidRho(f64),

    #[error("ensemble needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),

    #[error("non-finite value in ensemble state")]
    NonFiniteState,

    #[error("measurement selector is empty")]
    EmptyMeasurement,

    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

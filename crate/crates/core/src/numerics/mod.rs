//! Dense linear algebra, seeded random streams and the small set of
//! statistical routines the estimator and detector build on.

mod linalg;
mod matrix;
mod rng;
mod stats;

pub use linalg::{cholesky_solve, pairwise_sq_dist, Cholesky};
pub use matrix::Matrix;
pub(crate) use matrix::{dot, sq_dist};
pub use rng::{sample_index_without_replacement, RngStream};
pub use stats::{mean, mean_ci, sample_variance, welch_t_test, ConfidenceInterval};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}) differs from its transpose)")]
    NotSymmetric { row: usize, col: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("cannot draw {m} distinct indices from a population of {n}")]
    SampleTooLarge { n: usize, m: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

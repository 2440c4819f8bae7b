use thiserror::Error;

use crate::nullspace::NullspaceSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is numerically singular (sigma_min/sigma_max = {ratio:e})")]
    Singular { ratio: f64 },

    /// The similarity block of a tau vector is numerically singular.
    #[error("excluded set S: T(tau) is numerically singular (sigma_min/sigma_max = {ratio:e})")]
    ExcludedSet { ratio: f64 },

    #[error("no admissible solution: the null space of Delta is empty")]
    EmptyNullSpace,

    #[error("normalization failed: |(Z beta0)(end)| stayed below {threshold:e} after {attempts} draws")]
    NormalizationFailed { attempts: usize, threshold: f64 },

    #[error("infeasible start: objective is not finite at the initial point")]
    InfeasibleStart,

    #[error("not a descent direction (directional derivative {0:e})")]
    NotDescent(f64),

    #[error("line search failed after {0} trials")]
    LineSearchFailed(usize),

    #[error("objective is not finite at a probe point along coordinate {coord}")]
    ProbeNotFinite { coord: usize },

    #[error("all {starts} starts hit the excluded set S")]
    AllStartsExcluded { starts: usize },

    #[error("null-space solve did not converge (status {})", .0.result.status)]
    NotConverged(Box<NullspaceSolution>),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

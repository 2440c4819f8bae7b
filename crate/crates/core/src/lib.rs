//! Gray-box re-parameterization of linear state-space models.
//!
//! Given a black-box realization `(𝔄, 𝔅, ℭ)` and an affine model structure
//! `[vec A; vec B; vec C] = κ₀ + Kθ`, find parameters `θ` and a similarity
//! transform `T` with `𝔄T = TA(θ)`, `𝔅 = TB(θ)`, `ℭT = C(θ)`.
//!
//! Two solvers are provided: [`nullspace::solve_nullspace`] searches the
//! kernel of a linear constraint matrix, and [`lsq::solve_lsq`] minimizes the
//! similarity mismatch directly. [`lsq::solve_pipeline`] chains them.

pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lsq;
pub mod model;
pub mod nullspace;
pub mod optim;
pub mod structures;

pub use error::{Error, Result};
pub use model::{AffineStructure, Dims, StateSpace, ThetaVector};

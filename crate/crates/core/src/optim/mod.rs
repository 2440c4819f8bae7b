//! Quasi-Newton minimization and finite-difference gradient checking.
//!
//! Objectives may return `+inf` (or NaN) to mark infeasible points; the line
//! search treats such trials as a failure to decrease and shrinks the step.

mod bfgs;
mod gradcheck;
mod line_search;

pub use bfgs::bfgs;
pub use gradcheck::{
    check_gradient, check_jacobian, fd_gradient, fd_jacobian, GradCheck, JacobianCheck,
    DEFAULT_FD_STEP,
};
pub use line_search::{line_search_wolfe, LineSearchOutcome};

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Stop when `‖∇f‖_∞ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop when `|f_k − f_{k+1}| ≤ f_tol · max(|f_k|, |f_{k+1}|)`.
    pub f_tol: f64,
    pub max_iters: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Gaussian restarts on top of the deterministic start (null-space solver).
    pub restarts: usize,
    pub seed: u64,
    /// Worker threads for multistart.
    pub jobs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            f_tol: 1e-14,
            max_iters: 500,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 40,
            restarts: 4,
            seed: 0,
            jobs: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1 (got c1 = {}, c2 = {})",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if !(self.grad_tol > 0.0 && self.f_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "grad_tol and f_tol must be positive".into(),
            ));
        }
        if self.max_line_search == 0 {
            return Err(Error::InvalidArgument("max_line_search must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    ConvergedGrad,
    ConvergedFtol,
    MaxIters,
    LineSearchFailed,
}

impl Status {
    pub fn is_converged(self) -> bool {
        matches!(self, Status::ConvergedGrad | Status::ConvergedFtol)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::ConvergedGrad => "converged-grad",
            Status::ConvergedFtol => "converged-ftol",
            Status::MaxIters => "max-iters",
            Status::LineSearchFailed => "line-search-failed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x_best: DVector<f64>,
    pub f_best: f64,
    /// `‖∇f‖_∞` at `x_best`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: Status,
    /// One entry per accepted iterate, starting with the initial point.
    pub trace: Vec<TraceEntry>,
}

impl OptimResult {
    /// Trace as CSV with header `iter,f,grad_norm`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,f,grad_norm\n");
        for e in &self.trace {
            out.push_str(&format!("{},{:e},{:e}\n", e.iter, e.f, e.grad_norm));
        }
        out
    }

    /// True when the recorded objective values never increase.
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].f <= w[0].f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = OptimConfig {
            wolfe_c1: 0.9,
            wolfe_c2: 0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimConfig {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_from_partial_json() {
        let c: OptimConfig = serde_json::from_str(r#"{"max_iters": 20, "seed": 3}"#).unwrap();
        assert_eq!(c.max_iters, 20);
        assert_eq!(c.seed, 3);
        assert_eq!(c.wolfe_c2, 0.9);
        assert!(serde_json::from_str::<OptimConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let r = OptimResult {
            x_best: DVector::zeros(1),
            f_best: 0.0,
            grad_norm: 0.0,
            iterations: 1,
            status: Status::ConvergedGrad,
            trace: vec![
                TraceEntry { iter: 0, f: 1.0, grad_norm: 2.0 },
                TraceEntry { iter: 1, f: 0.0, grad_norm: 0.0 },
            ],
        };
        let csv = r.trace_csv();
        assert!(csv.starts_with("iter,f,grad_norm\n0,1e0,2e0\n"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(Status::LineSearchFailed.to_string(), "line-search-failed");
    }
}

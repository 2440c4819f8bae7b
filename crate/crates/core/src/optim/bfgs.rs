use nalgebra::{DMatrix, DVector};

use super::line_search::{search, SearchFailure};
use super::{OptimConfig, OptimResult, Status, TraceEntry};
use crate::error::{Error, Result};

/// Curvature pairs with `sᵀy ≤ CURVATURE_EPS · ‖s‖‖y‖` are skipped.
const CURVATURE_EPS: f64 = 1e-10;

/// Minimizes `f` with inverse-Hessian BFGS and a strong-Wolfe line search.
///
/// The inverse Hessian starts at the identity and is rescaled by `sᵀy / yᵀy`
/// just before the first curvature update. After each update the matrix is
/// symmetrized and probed with a Cholesky factorization; if rounding has
/// destroyed positive definiteness it is replaced by `(sᵀy / yᵀy)·I`.
///
/// When a line search fails on a quasi-Newton direction the approximation is
/// reset and the iteration retried along the steepest-descent direction; a
/// second failure ends the run with [`Status::LineSearchFailed`]. If the
/// budget runs out but some trial satisfied sufficient decrease, that trial
/// is accepted.
pub fn bfgs<F, G>(f: F, grad: G, x0: DVector<f64>, config: &OptimConfig) -> Result<OptimResult>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    config.validate()?;
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let mut g = grad(&x);

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut scaled = false;
    let mut iterations = 0usize;
    let mut trace = vec![TraceEntry {
        iter: 0,
        f: fx,
        grad_norm: g.amax(),
    }];

    let status = loop {
        if n == 0 || g.amax() <= config.grad_tol {
            break Status::ConvergedGrad;
        }
        if iterations >= config.max_iters {
            break Status::MaxIters;
        }

        let mut d = -(&h * &g);
        if !(g.dot(&d) < 0.0) {
            h = DMatrix::identity(n, n);
            h_is_identity = true;
            scaled = false;
            d = -g.clone();
        }

        let step = match search(&f, &grad, &x, fx, &g, &d, 1.0, config) {
            Ok(out) => out,
            Err(SearchFailure::Exhausted {
                armijo: Some(out), ..
            }) => out,
            Err(_) if !h_is_identity => {
                h = DMatrix::identity(n, n);
                h_is_identity = true;
                scaled = false;
                continue;
            }
            Err(_) => break Status::LineSearchFailed,
        };

        let s = &d * step.step;
        let y = &step.grad - &g;
        let f_prev = fx;
        x += &s;
        fx = step.f;
        g = step.grad;
        iterations += 1;
        trace.push(TraceEntry {
            iter: iterations,
            f: fx,
            grad_norm: g.amax(),
        });

        let sy = s.dot(&y);
        if sy > CURVATURE_EPS * s.norm() * y.norm() {
            if !scaled {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H⁺ = (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ, expanded
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            h = (&h + h.transpose()) * 0.5;
            h_is_identity = false;
            if h.clone().cholesky().is_none() {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
        }

        if g.amax() <= config.grad_tol {
            break Status::ConvergedGrad;
        }
        if (f_prev - fx).abs() <= config.f_tol * f_prev.abs().max(fx.abs()) {
            break Status::ConvergedFtol;
        }
    };

    Ok(OptimResult {
        grad_norm: g.amax(),
        x_best: x,
        f_best: fx,
        iterations,
        status,
        trace,
    })
}

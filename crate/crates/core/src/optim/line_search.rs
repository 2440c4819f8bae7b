use nalgebra::DVector;

use super::OptimConfig;
use crate::error::{Error, Result};

/// Accepted step along a search direction, with the objective and gradient
/// already evaluated there.
#[derive(Clone, Debug)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub f: f64,
    pub grad: DVector<f64>,
    pub evals: usize,
}

#[derive(Clone, Debug)]
struct Probe {
    step: f64,
    f: f64,
    slope: f64,
    grad: Option<DVector<f64>>,
}

pub(crate) enum SearchFailure {
    NotDescent(f64),
    /// Budget exhausted. Carries the best trial that satisfied sufficient
    /// decrease, if any.
    Exhausted {
        evals: usize,
        armijo: Option<LineSearchOutcome>,
    },
}

const MAX_STEP: f64 = 1e10;

/// Strong-Wolfe line search (bracketing followed by zoom with safeguarded
/// quadratic interpolation). Non-finite objective values count as a violation
/// of sufficient decrease.
pub fn line_search_wolfe<F, G>(
    f: F,
    grad: G,
    x: &DVector<f64>,
    d: &DVector<f64>,
    config: &OptimConfig,
) -> Result<LineSearchOutcome>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fx = f(x);
    if !fx.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let gx = grad(x);
    search(&f, &grad, x, fx, &gx, d, 1.0, config).map_err(|e| match e {
        SearchFailure::NotDescent(s) => Error::NotDescent(s),
        SearchFailure::Exhausted { evals, .. } => Error::LineSearchFailed(evals),
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn search<F, G>(
    f: &F,
    grad: &G,
    x: &DVector<f64>,
    fx: f64,
    gx: &DVector<f64>,
    d: &DVector<f64>,
    initial_step: f64,
    config: &OptimConfig,
) -> std::result::Result<LineSearchOutcome, SearchFailure>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let slope0 = gx.dot(d);
    if !(slope0 < 0.0) {
        return Err(SearchFailure::NotDescent(slope0));
    }
    let c1 = config.wolfe_c1;
    let c2 = config.wolfe_c2;
    let budget = config.max_line_search;

    let mut evals = 0usize;
    let mut best_armijo: Option<LineSearchOutcome> = None;

    let probe = |step: f64, evals: &mut usize, best: &mut Option<LineSearchOutcome>| -> Probe {
        *evals += 1;
        let xs = x + d * step;
        let fs = f(&xs);
        if !fs.is_finite() {
            return Probe {
                step,
                f: f64::INFINITY,
                slope: f64::NAN,
                grad: None,
            };
        }
        let gs = grad(&xs);
        let slope = gs.dot(d);
        if fs <= fx + c1 * step * slope0 && fs < best.as_ref().map_or(fx, |b| b.f) {
            *best = Some(LineSearchOutcome {
                step,
                f: fs,
                grad: gs.clone(),
                evals: *evals,
            });
        }
        Probe {
            step,
            f: fs,
            slope,
            grad: Some(gs),
        }
    };

    let accept = |p: Probe, evals: usize| LineSearchOutcome {
        step: p.step,
        f: p.f,
        grad: p.grad.expect("finite probe has a gradient"),
        evals,
    };
    let armijo_ok = |p: &Probe| p.f.is_finite() && p.f <= fx + c1 * p.step * slope0;
    let curvature_ok = |p: &Probe| p.slope.abs() <= -c2 * slope0;

    let mut prev = Probe {
        step: 0.0,
        f: fx,
        slope: slope0,
        grad: None,
    };
    let mut step = initial_step;

    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if evals >= budget {
            return Err(SearchFailure::Exhausted {
                evals,
                armijo: best_armijo,
            });
        }
        let cur = probe(step, &mut evals, &mut best_armijo);
        if !armijo_ok(&cur) || (evals > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature_ok(&cur) {
            return Ok(accept(cur, evals));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        prev = cur;
        step = (2.0 * step).min(MAX_STEP);
    };

    // Zoom phase: `lo` satisfies sufficient decrease and has the lowest value
    // seen so far; the minimizer lies between `lo` and `hi`.
    while evals < budget {
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1e-300) {
            break;
        }
        let mut trial = if hi.f.is_finite() {
            let delta = hi.step - lo.step;
            let denom = 2.0 * (hi.f - lo.f - lo.slope * delta);
            if denom > 0.0 {
                lo.step - lo.slope * delta * delta / denom
            } else {
                f64::NAN
            }
        } else {
            f64::NAN
        };
        if !(trial >= a + 0.1 * width && trial <= b - 0.1 * width) {
            trial = 0.5 * (a + b);
        }

        let cur = probe(trial, &mut evals, &mut best_armijo);
        if !armijo_ok(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature_ok(&cur) {
                return Ok(accept(cur, evals));
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }

    Err(SearchFailure::Exhausted {
        evals,
        armijo: best_armijo,
    })
}

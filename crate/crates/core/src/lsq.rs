//! Direct least-squares route: minimize the similarity mismatch
//!
//! `Ϝ(θ, T) = ‖𝔄T − TA(θ)‖² + ‖𝔅 − TB(θ)‖² + ‖ℭT − C(θ)‖²`
//!
//! jointly over the parameters and the transform.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, eval_structure, residuals, AffineStructure, Residuals, StateSpace, ThetaVector};
use crate::nullspace::{projection_operator, solve_nullspace, theta_from_gamma, NullspaceSolution};
use crate::optim::{bfgs, OptimConfig, OptimResult};

/// `T` with `σ_min < DEGENERATE_RCOND·σ_max` is flagged as degenerate.
pub const DEGENERATE_RCOND: f64 = 1e-8;

/// A point `(θ, T)` of the least-squares problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LsqPoint {
    pub theta: ThetaVector,
    pub t: DMatrix<f64>,
}

impl LsqPoint {
    /// `[θ; vec(T)]`.
    pub fn pack(&self) -> DVector<f64> {
        let n_theta = self.theta.len();
        let t = model::vec(&self.t);
        let mut x = DVector::zeros(n_theta + t.len());
        x.rows_mut(0, n_theta).copy_from(&self.theta);
        x.rows_mut(n_theta, t.len()).copy_from(&t);
        x
    }

    pub fn unpack(x: &DVector<f64>, n_theta: usize, n_x: usize) -> Result<Self> {
        if x.len() != n_theta + n_x * n_x {
            return Err(Error::Dimension(format!(
                "packed point has length {}, expected {}",
                x.len(),
                n_theta + n_x * n_x
            )));
        }
        Ok(Self {
            theta: x.rows(0, n_theta).into_owned(),
            t: model::reshape(&x.as_slice()[n_theta..], n_x, n_x)?,
        })
    }
}

fn check(blackbox: &StateSpace, s: &AffineStructure, theta: &ThetaVector, t: &DMatrix<f64>) -> Result<()> {
    s.check_dims(blackbox)?;
    s.check_theta(theta)?;
    let n_x = blackbox.dims().n_x;
    if t.shape() != (n_x, n_x) {
        return Err(Error::Dimension(format!(
            "T is {}x{}, expected {n_x}x{n_x}",
            t.nrows(),
            t.ncols()
        )));
    }
    Ok(())
}

/// `Ϝ(θ, T)`.
pub fn objective(blackbox: &StateSpace, s: &AffineStructure, theta: &ThetaVector, t: &DMatrix<f64>) -> Result<f64> {
    check(blackbox, s, theta, t)?;
    Ok(residuals(blackbox, t, &eval_structure(s, theta)?)?.sum_sq())
}

/// `∇_θ Ϝ = −2 [K_Aᵀ vec(Tᵀ𝔄T − TᵀTA) + K_Bᵀ vec(Tᵀ𝔅 − TᵀTB) + K_Cᵀ vec(ℭT − C)]`.
pub fn grad_theta(
    blackbox: &StateSpace,
    s: &AffineStructure,
    theta: &ThetaVector,
    t: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check(blackbox, s, theta, t)?;
    let m = eval_structure(s, theta)?;
    let tt = t.transpose();
    let ra = &tt * (blackbox.a() * t - t * m.a());
    let rb = &tt * (blackbox.b() - t * m.b());
    let rc = blackbox.c() * t - m.c();
    let g = s.k_a().transpose() * model::vec(&ra)
        + s.k_b().transpose() * model::vec(&rb)
        + s.k_c().transpose() * model::vec(&rc);
    Ok(g * -2.0)
}

/// `∇_T Ϝ = 2(ℭᵀℭT − ℭᵀC) + 2(𝔄ᵀ𝔄T − 𝔄ᵀTA − 𝔄TAᵀ + TAAᵀ) + 2(TBBᵀ − 𝔅Bᵀ)`.
pub fn grad_t(
    blackbox: &StateSpace,
    s: &AffineStructure,
    theta: &ThetaVector,
    t: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check(blackbox, s, theta, t)?;
    let m = eval_structure(s, theta)?;
    let (aa, bb, cc) = (blackbox.a(), blackbox.b(), blackbox.c());
    let (a, b, c) = (m.a(), m.b(), m.c());
    let ta = t * a;
    let gc = cc.transpose() * (cc * t - c);
    let ga = aa.transpose() * (aa * t) - aa.transpose() * &ta - aa * t * a.transpose() + &ta * a.transpose();
    let gb = t * b * b.transpose() - bb * b.transpose();
    Ok((gc + ga + gb) * 2.0)
}

/// Stacked gradient `[∇_θ Ϝ; vec(∇_T Ϝ)]`.
pub fn gradient(blackbox: &StateSpace, s: &AffineStructure, point: &LsqPoint) -> Result<DVector<f64>> {
    let g_theta = grad_theta(blackbox, s, &point.theta, &point.t)?;
    let g_t = grad_t(blackbox, s, &point.theta, &point.t)?;
    Ok(LsqPoint { theta: g_theta, t: g_t }.pack())
}

/// `T = I` and the parameters whose structured model is closest to the
/// black-box triplet itself.
pub fn default_init(blackbox: &StateSpace, s: &AffineStructure) -> Result<LsqPoint> {
    s.check_dims(blackbox)?;
    let theta = theta_from_gamma(&blackbox.stacked(), &projection_operator(s))?;
    let n_x = blackbox.dims().n_x;
    Ok(LsqPoint {
        theta,
        t: DMatrix::identity(n_x, n_x),
    })
}

#[derive(Clone, Debug)]
pub struct LsqSolution {
    pub theta: ThetaVector,
    pub t: DMatrix<f64>,
    pub result: OptimResult,
    pub objective: f64,
    pub initial_objective: f64,
    pub residuals: Residuals,
    pub cond_t: f64,
    /// `T̂` is numerically singular, so the recovered parameters are not a
    /// valid similarity solution even if `Ϝ` is small.
    pub degenerate_t: bool,
    pub wall_time_ms: f64,
}

impl LsqSolution {
    pub fn converged(&self) -> bool {
        self.result.status.is_converged()
    }
}

/// Minimizes `Ϝ` with BFGS from `init`. Non-convergence and degenerate `T̂`
/// are reported through the solution rather than as errors.
pub fn solve_lsq(
    blackbox: &StateSpace,
    s: &AffineStructure,
    init: &LsqPoint,
    config: &OptimConfig,
) -> Result<LsqSolution> {
    let clock = Instant::now();
    check(blackbox, s, &init.theta, &init.t)?;
    if init.theta.iter().chain(init.t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point"));
    }
    let (n_theta, n_x) = (s.n_theta(), blackbox.dims().n_x);
    let unpack = |x: &DVector<f64>| LsqPoint::unpack(x, n_theta, n_x).expect("packed length is fixed");

    let initial_objective = objective(blackbox, s, &init.theta, &init.t)?;
    let result = bfgs(
        |x: &DVector<f64>| {
            let p = unpack(x);
            objective(blackbox, s, &p.theta, &p.t).unwrap_or(f64::INFINITY)
        },
        |x: &DVector<f64>| gradient(blackbox, s, &unpack(x)).expect("dimensions checked"),
        init.pack(),
        config,
    )?;

    let best = unpack(&result.x_best);
    let res = residuals(blackbox, &best.t, &eval_structure(s, &best.theta)?)?;
    let rcond = linalg::inverse_condition(&best.t);
    Ok(LsqSolution {
        objective: res.sum_sq(),
        initial_objective,
        residuals: res,
        cond_t: linalg::condition_number(&best.t),
        degenerate_t: !(rcond >= DEGENERATE_RCOND),
        theta: best.theta,
        t: best.t,
        result,
        wall_time_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

/// Null-space solve followed by a least-squares polish started at its output.
#[derive(Clone, Debug)]
pub struct PipelineSolution {
    /// May carry a non-converged status; the polish runs regardless.
    pub nullspace: NullspaceSolution,
    pub lsq: LsqSolution,
}

pub fn solve_pipeline(
    blackbox: &StateSpace,
    s: &AffineStructure,
    config: &OptimConfig,
    seed: u64,
) -> Result<PipelineSolution> {
    let ns = match solve_nullspace(blackbox, s, config, seed) {
        Ok(ns) => ns,
        Err(Error::NotConverged(ns)) => *ns,
        Err(e) => return Err(e),
    };
    let init = LsqPoint {
        theta: ns.theta.clone(),
        t: ns.t.clone(),
    };
    let lsq = solve_lsq(blackbox, s, &init, config)?;
    Ok(PipelineSolution { nullspace: ns, lsq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_instance;
    use crate::optim::{check_gradient, fd_gradient, DEFAULT_FD_STEP};
    use crate::structures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Ϝ written as a sum over entries, without matrix products.
    fn objective_by_entries(bb: &StateSpace, m: &StateSpace, t: &DMatrix<f64>) -> f64 {
        let n = t.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut r = 0.0;
                for k in 0..n {
                    r += bb.a()[(i, k)] * t[(k, j)] - t[(i, k)] * m.a()[(k, j)];
                }
                total += r * r;
            }
            for j in 0..bb.b().ncols() {
                let mut r = bb.b()[(i, j)];
                for k in 0..n {
                    r -= t[(i, k)] * m.b()[(k, j)];
                }
                total += r * r;
            }
        }
        for i in 0..bb.c().nrows() {
            for j in 0..n {
                let mut r = -m.c()[(i, j)];
                for k in 0..n {
                    r += bb.c()[(i, k)] * t[(k, j)];
                }
                total += r * r;
            }
        }
        total
    }

    #[test]
    fn scalar_objective_values() {
        let s = structures::scalar();
        let bb = StateSpace::new(
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 4.0),
            DMatrix::from_element(1, 1, 0.25),
        )
        .unwrap();
        let th = DVector::from_vec(vec![3.0, 2.0]);
        let t2 = DMatrix::from_element(1, 1, 2.0);
        assert!(objective(&bb, &s, &th, &t2).unwrap() < 1e-28);
        let t1 = DMatrix::from_element(1, 1, 1.0);
        // (3 - 3)^2 + (4 - 2)^2 + (0.25 - 0.5)^2
        assert!((objective(&bb, &s, &th, &t1).unwrap() - 4.0625).abs() < 1e-14);
        // grad_theta at T = 1 hand-derived: -2 * [0, 2, ...] -> [0, -4]
        let g = grad_theta(&bb, &s, &th, &t1).unwrap();
        assert!((g - DVector::from_vec(vec![0.0, -4.0])).amax() < 1e-14);
    }

    #[test]
    fn objective_matches_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in structures::bundled() {
            let inst = generate_instance(&b.structure, &b.theta, 11, 10.0).unwrap();
            let n_x = b.structure.dims().n_x;
            let theta = gauss(b.structure.n_theta(), &mut rng);
            let t = DMatrix::from_fn(n_x, n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = eval_structure(&b.structure, &theta).unwrap();
            let lhs = objective(&inst.blackbox, &b.structure, &theta, &t).unwrap();
            let rhs = objective_by_entries(&inst.blackbox, &m, &t);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn vanishes_at_ground_truth() {
        for b in structures::bundled() {
            let inst = generate_instance(&b.structure, &b.theta, 2, 20.0).unwrap();
            let v = objective(&inst.blackbox, &b.structure, &inst.theta, &inst.t).unwrap();
            assert!(v < 1e-20, "{} {v}", b.name);
            let p = LsqPoint { theta: inst.theta.clone(), t: inst.t.clone() };
            assert!(gradient(&inst.blackbox, &b.structure, &p).unwrap().amax() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in structures::bundled() {
            let s = &b.structure;
            let inst = generate_instance(s, &b.theta, 1, 20.0).unwrap();
            let n_x = s.dims().n_x;
            for _ in 0..10 {
                let p = LsqPoint {
                    theta: gauss(s.n_theta(), &mut rng),
                    t: DMatrix::from_fn(n_x, n_x, |_, _| rng.sample::<f64, _>(StandardNormal)),
                };
                let x = p.pack();
                let f = |x: &DVector<f64>| {
                    let q = LsqPoint::unpack(x, s.n_theta(), n_x).unwrap();
                    objective(&inst.blackbox, s, &q.theta, &q.t).unwrap()
                };
                let g = |x: &DVector<f64>| {
                    gradient(&inst.blackbox, s, &LsqPoint::unpack(x, s.n_theta(), n_x).unwrap()).unwrap()
                };
                let r = check_gradient(f, g, &x, 1e-6).unwrap();
                assert!(r.pass, "{}: {r:?}", b.name);
            }
        }
    }

    #[test]
    fn grad_t_with_fd_on_t_only() {
        let b = &structures::bundled()[1];
        let inst = generate_instance(&b.structure, &b.theta, 4, 20.0).unwrap();
        let theta = DVector::from_vec(vec![1.0, -0.3, 2.0]);
        let t0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.4, 0.9]);
        let fd = fd_gradient(
            |x: &DVector<f64>| {
                objective(&inst.blackbox, &b.structure, &theta, &model::reshape(x.as_slice(), 2, 2).unwrap()).unwrap()
            },
            &model::vec(&t0),
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let g = grad_t(&inst.blackbox, &b.structure, &theta, &t0).unwrap();
        assert!((model::vec(&g) - fd).amax() <= 1e-6 * (1.0 + g.amax()));
    }

    #[test]
    fn pack_round_trip() {
        let p = LsqPoint {
            theta: DVector::from_vec(vec![1.0, 2.0]),
            t: DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]),
        };
        let x = p.pack();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0, 5.0, 4.0, 6.0]);
        assert_eq!(LsqPoint::unpack(&x, 2, 2).unwrap(), p);
        assert!(LsqPoint::unpack(&x, 1, 2).is_err());
    }

    #[test]
    fn default_init_projects_blackbox() {
        let s = structures::scalar();
        let bb = StateSpace::new(
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 4.0),
            DMatrix::from_element(1, 1, 0.25),
        )
        .unwrap();
        let p = default_init(&bb, &s).unwrap();
        assert_eq!(p.t, DMatrix::identity(1, 1));
        assert!((p.theta - DVector::from_vec(vec![3.0, 4.0])).amax() < 1e-14);
    }

    #[test]
    fn lsq_recovers_scalar_instance() {
        // 𝔄 = 3, 𝔅 = 4, ℭ = 0.25 is the structured model θ = [3, 2] seen through T = 2
        let s = structures::scalar();
        let bb = StateSpace::new(
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 4.0),
            DMatrix::from_element(1, 1, 0.25),
        )
        .unwrap();
        for init in [default_init(&bb, &s).unwrap(), LsqPoint { theta: DVector::zeros(2), t: DMatrix::identity(1, 1) }] {
            let sol = solve_lsq(&bb, &s, &init, &OptimConfig::default()).unwrap();
            assert!(sol.residuals.max() <= 1e-8, "{:?}", sol.residuals);
            assert!((&sol.theta - DVector::from_vec(vec![3.0, 2.0])).amax() < 1e-6);
            assert!(sol.result.is_monotone());
            assert!(!sol.degenerate_t);
            assert!(sol.objective <= sol.initial_objective);
        }
    }

    #[test]
    fn ground_truth_start_is_stationary() {
        let b = &structures::bundled()[1];
        let inst = generate_instance(&b.structure, &b.theta, 3, 20.0).unwrap();
        let init = LsqPoint { theta: inst.theta.clone(), t: inst.t.clone() };
        let sol = solve_lsq(&inst.blackbox, &b.structure, &init, &OptimConfig::default()).unwrap();
        assert!(sol.result.iterations <= 2);
        assert!(sol.objective <= 1e-12);
    }

    #[test]
    fn degenerate_start_is_flagged_when_stuck() {
        // T = 0 with theta = 0 and a zero black box: Ϝ = 0 already
        let s = structures::scalar();
        let bb = StateSpace::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let init = LsqPoint { theta: DVector::zeros(2), t: DMatrix::zeros(1, 1) };
        let sol = solve_lsq(&bb, &s, &init, &OptimConfig::default()).unwrap();
        assert!(sol.degenerate_t);
    }

    #[test]
    fn pipeline_does_not_increase_objective() {
        let b = &structures::bundled()[1];
        let inst = generate_instance(&b.structure, &b.theta, 8, 20.0).unwrap();
        let out = solve_pipeline(&inst.blackbox, &b.structure, &OptimConfig::default(), 0).unwrap();
        let before = objective(&inst.blackbox, &b.structure, &out.nullspace.theta, &out.nullspace.t).unwrap();
        assert!(out.lsq.objective <= before + 1e-12);
        assert_eq!(out.lsq.initial_objective, before);
    }
}

mod common;

use common::*;
use graybox::lsq::{self, LsqPoint};
use graybox::model::{eval_structure, generate_instance};
use graybox::nullspace::solve_nullspace;
use graybox::optim::OptimConfig;
use graybox::{structures, Error};
use nalgebra::{DMatrix, DVector};

fn tight() -> OptimConfig {
    OptimConfig {
        grad_tol: 1e-12,
        ..Default::default()
    }
}

#[test]
fn nullspace_recovers_scalar_instance() {
    let s = structures::scalar();
    let sol = solve_nullspace(&scalar_blackbox(), &s, &tight(), 0).unwrap();
    assert!(rel_err(&sol.theta, &DVector::from_vec(vec![3.0, 2.0])) <= 1e-8);
    assert!((sol.t[(0, 0)] - 2.0).abs() <= 1e-8);
    assert!(sol.result.is_monotone());
}

#[test]
fn nullspace_recovers_bundled_structures() {
    for b in structures::bundled() {
        for seed in 0..3 {
            let inst = generate_instance(&b.structure, &b.theta, seed, 20.0).unwrap();
            let sol = solve_nullspace(&inst.blackbox, &b.structure, &tight(), seed).unwrap();
            assert!(rel_err(&sol.theta, &b.theta) <= 1e-4, "{} seed {seed}", b.name);
            let m = eval_structure(&b.structure, &sol.theta).unwrap();
            assert!(max_residual(&inst.blackbox, &sol.t, &m) <= 1e-8, "{} seed {seed}", b.name);
            assert!((&sol.t - &inst.t).norm() <= 1e-6 * inst.t.norm());
        }
    }
}

#[test]
fn structured_blackbox_is_its_own_solution() {
    for b in structures::bundled() {
        let bb = eval_structure(&b.structure, &b.theta).unwrap();
        let sol = solve_nullspace(&bb, &b.structure, &tight(), 1).unwrap();
        assert!(sol.f_s <= 1e-12);
        assert!(sol.residuals.max() <= 1e-8, "{}", b.name);
    }
}

#[test]
fn lsq_from_truth_stays_put_and_from_nearby_point_converges() {
    let b = structures::by_name("mass-spring").unwrap();
    let inst = generate_instance(&b.structure, &b.theta, 4, 20.0).unwrap();
    let at_truth = LsqPoint { theta: b.theta.clone(), t: inst.t.clone() };
    let sol = lsq::solve_lsq(&inst.blackbox, &b.structure, &at_truth, &OptimConfig::default()).unwrap();
    assert!(sol.objective <= 1e-20 && sol.result.iterations <= 1);

    let nearby = LsqPoint {
        theta: b.theta.map(|v| v * 1.05),
        t: &inst.t * 0.97,
    };
    let sol = lsq::solve_lsq(&inst.blackbox, &b.structure, &nearby, &OptimConfig::default()).unwrap();
    assert!(sol.converged());
    assert!(sol.residuals.max() <= 1e-8);
    assert!(rel_err(&sol.theta, &b.theta) <= 1e-6);
    assert!(sol.result.is_monotone());
}

#[test]
fn pipeline_polish_does_not_increase_objective() {
    for b in structures::bundled() {
        let inst = generate_instance(&b.structure, &b.theta, 2, 20.0).unwrap();
        let p = lsq::solve_pipeline(&inst.blackbox, &b.structure, &OptimConfig::default(), 2).unwrap();
        let ns_obj = lsq::objective(&inst.blackbox, &b.structure, &p.nullspace.theta, &p.nullspace.t).unwrap();
        assert!(p.lsq.objective <= ns_obj + 1e-12, "{}", b.name);
        assert!(p.lsq.residuals.max() <= 1e-8);
        assert!(!p.lsq.degenerate_t);
    }
}

#[test]
fn singular_start_is_flagged() {
    let s = structures::scalar();
    let init = LsqPoint { theta: DVector::from_vec(vec![0.0, 0.0]), t: DMatrix::zeros(1, 1) };
    let bb = scalar_blackbox();
    let sol = lsq::solve_lsq(&bb, &s, &init, &OptimConfig::default()).unwrap();
    assert!(sol.degenerate_t || sol.residuals.max() <= 1e-8);
}

#[test]
fn mismatched_dims_are_rejected() {
    let s = structures::mass_spring();
    let bb = scalar_blackbox();
    assert!(matches!(solve_nullspace(&bb, &s, &OptimConfig::default(), 0), Err(Error::Dimension(_))));
    assert!(matches!(lsq::default_init(&bb, &s), Err(Error::Dimension(_))));
}

#[test]
fn nan_blackbox_is_rejected() {
    let s = structures::scalar();
    let bb = graybox::StateSpace::new(
        DMatrix::from_element(1, 1, f64::NAN),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    );
    if let Ok(bb) = bb {
        assert!(solve_nullspace(&bb, &s, &OptimConfig::default(), 0).is_err());
    }
}

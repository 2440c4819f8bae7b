#![allow(dead_code)]

use graybox::model::{AffineStructure, Dims, StateSpace};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gauss_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Every `(n_x, n_u, n_y)` with `n_x ∈ 1..=4` and `n_u, n_y ∈ {1, 2}`.
pub fn dims_grid() -> Vec<Dims> {
    let mut out = Vec::new();
    for n_x in 1..=4 {
        for n_u in 1..=2 {
            for n_y in 1..=2 {
                out.push(Dims::new(n_x, n_u, n_y).unwrap());
            }
        }
    }
    out
}

pub fn random_blackbox(dims: Dims, rng: &mut ChaCha8Rng) -> StateSpace {
    StateSpace::new(
        gauss_mat(dims.n_x, dims.n_x, rng),
        gauss_mat(dims.n_x, dims.n_u, rng),
        gauss_mat(dims.n_y, dims.n_x, rng),
    )
    .unwrap()
}

/// Dense random affine structure with `n_theta` parameters. With
/// `rank_deficient` the last column of `K` repeats a combination of the
/// others.
pub fn random_structure(dims: Dims, n_theta: usize, rank_deficient: bool, rng: &mut ChaCha8Rng) -> AffineStructure {
    let mut k = gauss_mat(dims.n_delta(), n_theta, rng);
    if rank_deficient && n_theta >= 2 {
        let combo = k.column(0) * 0.7 - k.column(1) * 1.3;
        k.set_column(n_theta - 1, &combo);
    }
    AffineStructure::new(dims, gauss_vec(dims.n_delta(), rng), k).unwrap()
}

/// Squared distance from `v` to the column span of `k`, via modified
/// Gram-Schmidt with dependent columns dropped.
pub fn dist_to_span_sq(k: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = k.norm().max(1.0);
    for j in 0..k.ncols() {
        let mut q = k.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                q -= b * b.dot(&q);
            }
        }
        let n = q.norm();
        if n > 1e-10 * scale {
            basis.push(q / n);
        }
    }
    let mut r = v.clone();
    for _ in 0..2 {
        for b in &basis {
            r -= b * b.dot(&r);
        }
    }
    r.norm_squared()
}

/// `[vec T; vec(T A); vec(T B); vec C; 1]` for a structured model and transform.
pub fn tau_true(t: &DMatrix<f64>, structured: &StateSpace) -> DVector<f64> {
    let parts = [
        t.clone(),
        t * structured.a(),
        t * structured.b(),
        structured.c().clone(),
    ];
    let mut v: Vec<f64> = parts.iter().flat_map(|m| m.iter().copied()).collect();
    v.push(1.0);
    DVector::from_vec(v)
}

/// Residuals of the similarity equations, computed entrywise.
pub fn max_residual(bb: &StateSpace, t: &DMatrix<f64>, structured: &StateSpace) -> f64 {
    let ra = bb.a() * t - t * structured.a();
    let rb = bb.b() - t * structured.b();
    let rc = bb.c() * t - structured.c();
    ra.norm().max(rb.norm()).max(rc.norm())
}

pub fn rel_err(est: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

/// The hand-checkable scalar black box `(3, 4, 0.25)`.
pub fn scalar_blackbox() -> StateSpace {
    StateSpace::new(
        DMatrix::from_element(1, 1, 3.0),
        DMatrix::from_element(1, 1, 4.0),
        DMatrix::from_element(1, 1, 0.25),
    )
    .unwrap()
}

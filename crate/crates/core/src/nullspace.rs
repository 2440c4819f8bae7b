//! Null-space route to the similarity problem.
//!
//! The similarity equations `𝔄T = TA`, `𝔅 = TB`, `ℭT = C` are linear in the
//! stacked unknown `τ = [vec(T); vec(TA); vec(TB); vec(C); 1]`, so they read
//! `Δτ = 0` for a matrix `Δ` built from the black-box triplet alone. Every
//! admissible `τ` (last entry equal to one) is written as `Z(β₀ + Z₂α)`, and
//! the structural mismatch of the realization extracted from `τ` is
//! minimized over `α`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    self, eval_structure, kron, residuals, AffineStructure, Dims, Residuals, StateSpace,
    ThetaVector, SINGULAR_RCOND,
};
use crate::optim::{bfgs, OptimConfig, OptimResult};

/// `|(Zβ₀)(end)|` below this triggers a redraw of `β₀`.
pub const BETA0_MIN_LAST: f64 = 1e-8;
pub const BETA0_MAX_DRAWS: usize = 16;

/// Stacked unknown `[vec(T); vec(TA); vec(TB); vec(C); 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TauVector {
    values: DVector<f64>,
    dims: Dims,
}

impl TauVector {
    pub fn new(dims: Dims, values: DVector<f64>) -> Result<Self> {
        if values.len() != dims.n_tau() {
            return Err(Error::Dimension(format!(
                "tau has length {}, expected {}",
                values.len(),
                dims.n_tau()
            )));
        }
        Ok(Self { values, dims })
    }

    /// Builds `τ` from a similarity transform and a structured model.
    pub fn from_truth(t: &DMatrix<f64>, structured: &StateSpace) -> Result<Self> {
        let dims = structured.dims();
        if t.shape() != (dims.n_x, dims.n_x) {
            return Err(Error::Dimension("T does not match n_x".into()));
        }
        let mut v = DVector::zeros(dims.n_tau());
        let (la, lb, lc) = (dims.len_a(), dims.len_b(), dims.len_c());
        v.rows_mut(0, la).copy_from(&model::vec(t));
        v.rows_mut(la, la).copy_from(&model::vec(&(t * structured.a())));
        v.rows_mut(2 * la, lb).copy_from(&model::vec(&(t * structured.b())));
        v.rows_mut(2 * la + lb, lc).copy_from(&model::vec(structured.c()));
        v[dims.n_tau() - 1] = 1.0;
        Ok(Self { values: v, dims })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    fn block(&self, offset: usize, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(rows, cols, &self.values.as_slice()[offset..offset + rows * cols])
    }

    /// `𝕋(τ)`, the similarity block.
    pub fn t_block(&self) -> DMatrix<f64> {
        self.block(0, self.dims.n_x, self.dims.n_x)
    }

    /// Raw `TA` block.
    pub fn a_block(&self) -> DMatrix<f64> {
        self.block(self.dims.len_a(), self.dims.n_x, self.dims.n_x)
    }

    /// Raw `TB` block.
    pub fn b_block(&self) -> DMatrix<f64> {
        self.block(2 * self.dims.len_a(), self.dims.n_x, self.dims.n_u)
    }

    pub fn c_block(&self) -> DMatrix<f64> {
        let off = 2 * self.dims.len_a() + self.dims.len_b();
        self.block(off, self.dims.n_y, self.dims.n_x)
    }
}

/// Coefficient matrix of the kernel problem `Δτ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaMatrix {
    pub entries: DMatrix<f64>,
    pub dims: Dims,
}

impl DeltaMatrix {
    /// Numerical rank with the default `σ_max·max(m, n)·eps` threshold.
    pub fn rank(&self) -> usize {
        let (m, n) = self.entries.shape();
        let s = linalg::singular_values(&self.entries);
        let cutoff = s.get(0).copied().unwrap_or(0.0) * linalg::default_rank_tol(m, n);
        s.iter().filter(|&&v| v > cutoff).count()
    }

    pub fn default_rank_tol(&self) -> f64 {
        linalg::default_rank_tol(self.entries.nrows(), self.entries.ncols())
    }
}

/// Assembles `Δ`:
///
/// ```text
/// [ I⊗𝔄  −I   0   0   0      ]
/// [ 0     0    I   0  −vec(𝔅) ]
/// [ I⊗ℭ  0    0  −I   0      ]
/// ```
pub fn build_delta(blackbox: &StateSpace) -> DeltaMatrix {
    let dims = blackbox.dims();
    let (n_x, la, lb, lc) = (dims.n_x, dims.len_a(), dims.len_b(), dims.len_c());
    let eye = DMatrix::<f64>::identity(n_x, n_x);
    let mut d = DMatrix::zeros(dims.n_delta(), dims.n_tau());

    d.view_mut((0, 0), (la, la)).copy_from(&kron(&eye, blackbox.a()));
    d.view_mut((0, la), (la, la)).fill_diagonal(-1.0);

    d.view_mut((la, 2 * la), (lb, lb)).fill_diagonal(1.0);
    d.view_mut((la, dims.n_tau() - 1), (lb, 1))
        .copy_from(&(-model::vec(blackbox.b())));

    d.view_mut((la + lb, 0), (lc, la)).copy_from(&kron(&eye, blackbox.c()));
    d.view_mut((la + lb, 2 * la + lb), (lc, lc)).fill_diagonal(-1.0);

    DeltaMatrix { entries: d, dims }
}

/// Orthonormal basis of `null(Δ)` from singular values `≤ rank_tol·σ_max`.
pub fn nullspace_basis(delta: &DeltaMatrix, rank_tol: f64) -> Result<DMatrix<f64>> {
    if delta.entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Delta"));
    }
    let z = linalg::null_space(&delta.entries, rank_tol);
    if z.ncols() == 0 {
        return Err(Error::EmptyNullSpace);
    }
    Ok(z)
}

/// Draws `β₀` and rescales it so that `(Zβ₀)(end) = 1`.
pub fn find_beta0(z: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    find_beta0_with(z, BETA0_MAX_DRAWS, |n| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    })
}

pub(crate) fn find_beta0_with<D>(z: &DMatrix<f64>, max_draws: usize, mut draw: D) -> Result<DVector<f64>>
where
    D: FnMut(usize) -> DVector<f64>,
{
    let n_z = z.ncols();
    let last_row = z.row(z.nrows() - 1).transpose();
    let failed = Error::NormalizationFailed {
        attempts: max_draws,
        threshold: BETA0_MIN_LAST,
    };
    if last_row.iter().all(|&v| v == 0.0) {
        return Err(failed);
    }
    for _ in 0..max_draws {
        let beta = draw(n_z);
        let last = last_row.dot(&beta);
        if last.abs() >= BETA0_MIN_LAST {
            return Ok(beta / last);
        }
    }
    Err(failed)
}

/// Orthonormal basis `Z₂` of the null space of the last row of `Z`, so that
/// `(Z Z₂ α)(end) = 0` for every `α`. Empty when `Z` has a single column.
pub fn last_row_nullspace(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n_z = z.ncols();
    if n_z <= 1 {
        return Ok(DMatrix::zeros(n_z, 0));
    }
    let row = z.rows(z.nrows() - 1, 1).into_owned();
    if row.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("last row of Z is identically zero".into()));
    }
    Ok(linalg::null_space(&row, linalg::default_rank_tol(1, n_z)))
}

/// Parameterization `𝒳 = { Z(β₀ + Z₂α) }` of the admissible `τ` vectors.
#[derive(Clone, Debug)]
pub struct NullBasis {
    pub z: DMatrix<f64>,
    pub beta0: DVector<f64>,
    pub z2: DMatrix<f64>,
    pub dims: Dims,
}

impl NullBasis {
    pub fn new(delta: &DeltaMatrix, seed: u64, rank_tol: Option<f64>) -> Result<Self> {
        let z = nullspace_basis(delta, rank_tol.unwrap_or_else(|| delta.default_rank_tol()))?;
        let beta0 = find_beta0(&z, seed)?;
        let z2 = last_row_nullspace(&z)?;
        Ok(Self {
            z,
            beta0,
            z2,
            dims: delta.dims,
        })
    }

    pub fn from_blackbox(blackbox: &StateSpace, seed: u64) -> Result<Self> {
        Self::new(&build_delta(blackbox), seed, None)
    }

    pub fn n_z(&self) -> usize {
        self.z.ncols()
    }

    /// Dimension of `α`.
    pub fn n_alpha(&self) -> usize {
        self.z2.ncols()
    }
}

/// `τ = Z(β₀ + Z₂α)`, with the last entry pinned to one.
pub fn tau_of_alpha(basis: &NullBasis, alpha: &DVector<f64>) -> Result<TauVector> {
    if alpha.len() != basis.n_alpha() {
        return Err(Error::Dimension(format!(
            "alpha has length {}, expected {}",
            alpha.len(),
            basis.n_alpha()
        )));
    }
    let mut v = &basis.z * (&basis.beta0 + &basis.z2 * alpha);
    let last = v.len() - 1;
    v[last] = 1.0;
    TauVector::new(basis.dims, v)
}

/// Realization `(𝕋⁻¹·TA, 𝕋⁻¹·TB, C)` carried by a `τ` vector, together with `𝕋`.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Realization {
    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(self.a.clone(), self.b.clone(), self.c.clone())
    }

    /// `[vec(A); vec(B); vec(C)]`.
    pub fn gamma(&self) -> DVector<f64> {
        let (a, b, c) = (model::vec(&self.a), model::vec(&self.b), model::vec(&self.c));
        let mut out = DVector::zeros(a.len() + b.len() + c.len());
        out.rows_mut(0, a.len()).copy_from(&a);
        out.rows_mut(a.len(), b.len()).copy_from(&b);
        out.rows_mut(a.len() + b.len(), c.len()).copy_from(&c);
        out
    }
}

/// Splits `τ` into `𝕋` and the realization it induces. Fails with
/// [`Error::ExcludedSet`] when `σ_min(𝕋) < 1e-10·σ_max(𝕋)`.
pub fn extract_realization(tau: &TauVector) -> Result<Realization> {
    let t = tau.t_block();
    let t_inv = linalg::checked_inverse(&t, SINGULAR_RCOND).map_err(|e| match e {
        Error::Singular { ratio } => Error::ExcludedSet { ratio },
        other => other,
    })?;
    Ok(Realization {
        a: &t_inv * tau.a_block(),
        b: &t_inv * tau.b_block(),
        c: tau.c_block(),
        t,
        t_inv,
    })
}

/// `γ(τ)`, the stacked realization.
pub fn gamma(tau: &TauVector) -> Result<DVector<f64>> {
    Ok(extract_realization(tau)?.gamma())
}

/// `M_K = K(KᵀK)†Kᵀ − I` together with the factor `(KᵀK)†Kᵀ = K†`, both from
/// one SVD of `K`.
#[derive(Clone, Debug)]
pub struct ProjectionOperator {
    pub m_k: DMatrix<f64>,
    pub pinv_k: DMatrix<f64>,
    pub kappa0: DVector<f64>,
    pub rank: usize,
}

pub fn projection_operator(s: &AffineStructure) -> ProjectionOperator {
    let k = s.k();
    let n_delta = k.nrows();
    let (pinv_k, rank) = linalg::pinv(k, linalg::default_rank_tol(n_delta, k.ncols()));
    let m_k = k * &pinv_k - DMatrix::identity(n_delta, n_delta);
    ProjectionOperator {
        m_k,
        pinv_k,
        kappa0: s.kappa0().clone(),
        rank,
    }
}

impl ProjectionOperator {
    fn check(&self, gamma: &DVector<f64>) -> Result<()> {
        if gamma.len() != self.kappa0.len() {
            return Err(Error::Dimension(format!(
                "gamma has length {}, expected {}",
                gamma.len(),
                self.kappa0.len()
            )));
        }
        Ok(())
    }

    /// `M_K(κ₀ − γ)`.
    fn residual(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.m_k * (&self.kappa0 - gamma)
    }
}

/// Structural distance `‖M_K(κ₀ − γ)‖²`.
pub fn f_s(gamma: &DVector<f64>, proj: &ProjectionOperator) -> Result<f64> {
    proj.check(gamma)?;
    Ok(proj.residual(gamma).norm_squared())
}

/// Least-squares parameters `θ* = K†(γ − κ₀)` of the structured model closest
/// to `γ`.
pub fn theta_from_gamma(gamma: &DVector<f64>, proj: &ProjectionOperator) -> Result<ThetaVector> {
    proj.check(gamma)?;
    Ok(&proj.pinv_k * (gamma - &proj.kappa0))
}

/// Jacobians of `τ ↦ vec(A)`, `vec(B)`, `vec(C)` of the extracted realization.
#[derive(Clone, Debug)]
pub struct Jacobians {
    pub j_a: DMatrix<f64>,
    pub j_b: DMatrix<f64>,
    pub j_c: DMatrix<f64>,
}

impl Jacobians {
    /// `[J_A; J_B; J_C]`, the Jacobian of `γ`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (ra, rb, rc) = (self.j_a.nrows(), self.j_b.nrows(), self.j_c.nrows());
        let mut out = DMatrix::zeros(ra + rb + rc, self.j_a.ncols());
        out.rows_mut(0, ra).copy_from(&self.j_a);
        out.rows_mut(ra, rb).copy_from(&self.j_b);
        out.rows_mut(ra + rb, rc).copy_from(&self.j_c);
        out
    }
}

fn jacobians_of(tau: &TauVector, real: &Realization) -> Jacobians {
    let dims = tau.dims();
    let (n_x, n_u) = (dims.n_x, dims.n_u);
    let (la, lb, lc) = (dims.len_a(), dims.len_b(), dims.len_c());
    let n_tau = dims.n_tau();
    let off_a = la;
    let off_b = 2 * la;
    let off_c = 2 * la + lb;

    // J_A = −((𝕋⁻¹𝔸)ᵀ ⊗ 𝕋⁻¹) P_T + (I ⊗ 𝕋⁻¹) P_A
    let mut j_a = DMatrix::zeros(la, n_tau);
    j_a.view_mut((0, 0), (la, la))
        .copy_from(&(-kron(&real.a.transpose(), &real.t_inv)));
    j_a.view_mut((0, off_a), (la, la))
        .copy_from(&kron(&DMatrix::identity(n_x, n_x), &real.t_inv));

    // J_B = −((𝕋⁻¹𝔹)ᵀ ⊗ 𝕋⁻¹) P_T + (I ⊗ 𝕋⁻¹) P_B
    let mut j_b = DMatrix::zeros(lb, n_tau);
    j_b.view_mut((0, 0), (lb, la))
        .copy_from(&(-kron(&real.b.transpose(), &real.t_inv)));
    j_b.view_mut((0, off_b), (lb, lb))
        .copy_from(&kron(&DMatrix::identity(n_u, n_u), &real.t_inv));

    // J_C = P_C
    let mut j_c = DMatrix::zeros(lc, n_tau);
    j_c.view_mut((0, off_c), (lc, lc)).fill_diagonal(1.0);

    Jacobians { j_a, j_b, j_c }
}

pub fn jacobians(tau: &TauVector) -> Result<Jacobians> {
    let real = extract_realization(tau)?;
    Ok(jacobians_of(tau, &real))
}

/// `h(τ) = ‖M_K(κ₀ − γ(τ))‖²`.
pub fn h(tau: &TauVector, proj: &ProjectionOperator) -> Result<f64> {
    f_s(&gamma(tau)?, proj)
}

/// `∇_τ h = −2 [J_Aᵀ J_Bᵀ J_Cᵀ] M_KᵀM_K (κ₀ − γ(τ))`.
pub fn grad_h(tau: &TauVector, proj: &ProjectionOperator) -> Result<DVector<f64>> {
    let real = extract_realization(tau)?;
    let gamma = real.gamma();
    proj.check(&gamma)?;
    let jac = jacobians_of(tau, &real).stacked();
    let weighted = proj.m_k.transpose() * proj.residual(&gamma);
    Ok(jac.transpose() * weighted * -2.0)
}

/// `h̄(α) = h(Z(β₀ + Z₂α))`.
pub fn hbar(alpha: &DVector<f64>, basis: &NullBasis, proj: &ProjectionOperator) -> Result<f64> {
    h(&tau_of_alpha(basis, alpha)?, proj)
}

/// `∇_α h̄ = Z₂ᵀ Zᵀ ∇_τ h(Z(β₀ + Z₂α))`.
pub fn grad_hbar(
    alpha: &DVector<f64>,
    basis: &NullBasis,
    proj: &ProjectionOperator,
) -> Result<DVector<f64>> {
    let g = grad_h(&tau_of_alpha(basis, alpha)?, proj)?;
    Ok(basis.z2.transpose() * (basis.z.transpose() * g))
}

/// Result of the null-space solve.
#[derive(Clone, Debug)]
pub struct NullspaceSolution {
    pub theta: ThetaVector,
    pub t: DMatrix<f64>,
    pub tau: TauVector,
    /// Realization extracted from the optimal `τ`.
    pub realization: StateSpace,
    pub result: OptimResult,
    pub f_s: f64,
    pub residuals: Residuals,
    pub n_z: usize,
    pub cond_t: f64,
    pub starts: usize,
    pub excluded_starts: usize,
    pub wall_time_ms: f64,
}

/// Start points for multistart: `α = 0` followed by `restarts` standard
/// Gaussian draws.
fn start_points(n_alpha: usize, restarts: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = vec![DVector::zeros(n_alpha)];
    for _ in 0..restarts {
        out.push(DVector::from_fn(n_alpha, |_, _| rng.sample::<f64, _>(StandardNormal)));
    }
    out
}

fn run_starts(
    starts: &[DVector<f64>],
    basis: &NullBasis,
    proj: &ProjectionOperator,
    config: &OptimConfig,
) -> Vec<Result<OptimResult>> {
    let run = |alpha0: &DVector<f64>| {
        bfgs(
            |a: &DVector<f64>| hbar(a, basis, proj).unwrap_or(f64::INFINITY),
            |a: &DVector<f64>| grad_hbar(a, basis, proj).expect("gradient requested at a feasible point"),
            alpha0.clone(),
            config,
        )
    };
    let jobs = config.jobs.max(1).min(starts.len().max(1));
    if jobs == 1 {
        return starts.iter().map(run).collect();
    }
    let mut slots: Vec<Option<Result<OptimResult>>> = (0..starts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let run = &run;
                scope.spawn(move || {
                    (w..starts.len())
                        .step_by(jobs)
                        .map(|i| (i, run(&starts[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("multistart worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every start ran")).collect()
}

/// Full null-space pipeline: `Δ` → `Z` → `(β₀, Z₂)` → BFGS on `h̄` from
/// `α = 0` plus `config.restarts` Gaussian restarts → `θ̂`, `T̂` at the best
/// optimum found.
pub fn solve_nullspace(
    blackbox: &StateSpace,
    s: &AffineStructure,
    config: &OptimConfig,
    seed: u64,
) -> Result<NullspaceSolution> {
    let clock = Instant::now();
    s.check_dims(blackbox)?;
    config.validate()?;

    let basis = NullBasis::from_blackbox(blackbox, seed)?;
    let proj = projection_operator(s);
    let starts = start_points(basis.n_alpha(), config.restarts, seed);

    let mut best: Option<OptimResult> = None;
    let mut excluded = 0;
    for outcome in run_starts(&starts, &basis, &proj, config) {
        match outcome {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.f_best < b.f_best) {
                    best = Some(r);
                }
            }
            Err(Error::InfeasibleStart) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let result = best.ok_or(Error::AllStartsExcluded {
        starts: starts.len(),
    })?;

    let tau = tau_of_alpha(&basis, &result.x_best)?;
    let real = extract_realization(&tau)?;
    let gamma = real.gamma();
    let theta = theta_from_gamma(&gamma, &proj)?;
    let structured = eval_structure(s, &theta)?;
    let res = residuals(blackbox, &real.t, &structured)?;

    let solution = NullspaceSolution {
        f_s: f_s(&gamma, &proj)?,
        cond_t: linalg::condition_number(&real.t),
        realization: real.state_space()?,
        t: real.t,
        theta,
        tau,
        residuals: res,
        n_z: basis.n_z(),
        starts: starts.len(),
        excluded_starts: excluded,
        wall_time_ms: clock.elapsed().as_secs_f64() * 1e3,
        result,
    };
    if !solution.result.status.is_converged() {
        return Err(Error::NotConverged(Box::new(solution)));
    }
    Ok(solution)
}

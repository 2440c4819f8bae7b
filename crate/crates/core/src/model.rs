//! State-space triplets, affine gray-box structures, and the vectorization
//! tools that tie them together.
//!
//! Vectorization is column-major everywhere: `vec([[1, 3], [2, 4]]) = [1, 2, 3, 4]`.
//! With that convention `vec(M N P) = (Pᵀ ⊗ M) vec(N)`, which is the identity
//! the kernel formulation and the Jacobians rely on.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Parameter vector of a structured model.
pub type ThetaVector = DVector<f64>;

/// Relative singularity threshold used when a similarity matrix is inverted.
pub const SINGULAR_RCOND: f64 = 1e-10;

/// Default bound on `cond(T)` for generated instances.
pub const DEFAULT_COND_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_u: usize, n_y: usize) -> Result<Self> {
        if n_x == 0 || n_u == 0 || n_y == 0 {
            return Err(Error::Dimension(format!(
                "n_x, n_u, n_y must be positive (got {n_x}, {n_u}, {n_y})"
            )));
        }
        Ok(Self { n_x, n_u, n_y })
    }

    /// Number of similarity equations, `n_x² + n_x(n_u + n_y)`.
    pub fn n_delta(&self) -> usize {
        self.n_x * self.n_x + self.n_x * (self.n_u + self.n_y)
    }

    /// Length of the stacked unknown, `2n_x² + n_x(n_u + n_y) + 1`.
    pub fn n_tau(&self) -> usize {
        2 * self.n_x * self.n_x + self.n_x * (self.n_u + self.n_y) + 1
    }

    pub fn len_a(&self) -> usize {
        self.n_x * self.n_x
    }

    pub fn len_b(&self) -> usize {
        self.n_x * self.n_u
    }

    pub fn len_c(&self) -> usize {
        self.n_y * self.n_x
    }
}

/// Column-major stacking of a matrix.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores column-major, so the storage order is the vec order.
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`]: fills an `n1 x n2` matrix column by column.
pub fn reshape(v: &[f64], n1: usize, n2: usize) -> Result<DMatrix<f64>> {
    if v.len() != n1 * n2 {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {n1}x{n2}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(n1, n2, v))
}

/// Kronecker product `m ⊗ n`.
pub fn kron(m: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    m.kronecker(n)
}

/// A continuous-time triplet `(A, B, C)` without feed-through.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    dims: Dims,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let dims = Dims::new(a.nrows(), b.ncols(), c.nrows())?;
        if a.ncols() != dims.n_x || b.nrows() != dims.n_x || c.ncols() != dims.n_x {
            return Err(Error::Dimension(format!(
                "inconsistent shapes A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(Self { a, b, c, dims })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `[vec(A); vec(B); vec(C)]`, length `n_Δ`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.n_delta());
        let (la, lb) = (self.dims.len_a(), self.dims.len_b());
        out.rows_mut(0, la).copy_from(&vec(&self.a));
        out.rows_mut(la, lb).copy_from(&vec(&self.b));
        out.rows_mut(la + lb, self.dims.len_c()).copy_from(&vec(&self.c));
        out
    }

    /// Inverse of [`StateSpace::stacked`].
    pub fn from_stacked(dims: Dims, v: &DVector<f64>) -> Result<Self> {
        if v.len() != dims.n_delta() {
            return Err(Error::Dimension(format!(
                "stacked vector has length {}, expected {}",
                v.len(),
                dims.n_delta()
            )));
        }
        let (la, lb, lc) = (dims.len_a(), dims.len_b(), dims.len_c());
        let s = v.as_slice();
        let a = reshape(&s[..la], dims.n_x, dims.n_x)?;
        let b = reshape(&s[la..la + lb], dims.n_x, dims.n_u)?;
        let c = reshape(&s[la + lb..la + lb + lc], dims.n_y, dims.n_x)?;
        Self::new(a, b, c)
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared() + self.c.norm_squared()).sqrt()
    }
}

/// Affine gray-box structure `κ(θ) = κ₀ + Kθ` over `[vec(A); vec(B); vec(C)]`.
///
/// Rows `[0, n_x²)` of `K` drive `A`, the next `n_x n_u` rows drive `B` and
/// the last `n_x n_y` rows drive `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineStructure {
    kappa0: DVector<f64>,
    k: DMatrix<f64>,
    dims: Dims,
}

impl AffineStructure {
    pub fn new(dims: Dims, kappa0: DVector<f64>, k: DMatrix<f64>) -> Result<Self> {
        if kappa0.len() != dims.n_delta() || k.nrows() != dims.n_delta() {
            return Err(Error::Dimension(format!(
                "kappa0 has length {} and K has {} rows; both must equal n_delta = {}",
                kappa0.len(),
                k.nrows(),
                dims.n_delta()
            )));
        }
        if kappa0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("kappa0"));
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("K"));
        }
        Ok(Self { kappa0, k, dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_theta(&self) -> usize {
        self.k.ncols()
    }

    pub fn kappa0(&self) -> &DVector<f64> {
        &self.kappa0
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Rows of `K` driving `vec(A)`.
    pub fn k_a(&self) -> DMatrix<f64> {
        self.k.rows(0, self.dims.len_a()).into_owned()
    }

    pub fn k_b(&self) -> DMatrix<f64> {
        self.k.rows(self.dims.len_a(), self.dims.len_b()).into_owned()
    }

    pub fn k_c(&self) -> DMatrix<f64> {
        let off = self.dims.len_a() + self.dims.len_b();
        self.k.rows(off, self.dims.len_c()).into_owned()
    }

    pub fn check_theta(&self, theta: &ThetaVector) -> Result<()> {
        if theta.len() != self.n_theta() {
            return Err(Error::Dimension(format!(
                "theta has length {}, structure expects {}",
                theta.len(),
                self.n_theta()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        Ok(())
    }

    /// `κ₀ + Kθ`.
    pub fn kappa(&self, theta: &ThetaVector) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        Ok(&self.kappa0 + &self.k * theta)
    }

    pub fn check_dims(&self, model: &StateSpace) -> Result<()> {
        if model.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "model dims {:?} do not match structure dims {:?}",
                model.dims(),
                self.dims
            )));
        }
        Ok(())
    }
}

/// `(A(θ), B(θ), C(θ))` from an affine structure.
pub fn eval_structure(s: &AffineStructure, theta: &ThetaVector) -> Result<StateSpace> {
    StateSpace::from_stacked(s.dims(), &s.kappa(theta)?)
}

/// Black-box triplet `(T A T⁻¹, T B, C T⁻¹)` seen through the coordinate change `T`.
pub fn apply_similarity(truth: &StateSpace, t: &DMatrix<f64>) -> Result<StateSpace> {
    let n_x = truth.dims().n_x;
    if t.shape() != (n_x, n_x) {
        return Err(Error::Dimension(format!(
            "T is {}x{}, expected {n_x}x{n_x}",
            t.nrows(),
            t.ncols()
        )));
    }
    let t_inv = linalg::checked_inverse(t, SINGULAR_RCOND)?;
    StateSpace::new(t * truth.a() * &t_inv, t * truth.b(), truth.c() * &t_inv)
}

/// Frobenius norms of the three similarity equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub r_a: f64,
    pub r_b: f64,
    pub r_c: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.r_a.max(self.r_b).max(self.r_c)
    }

    pub fn sum_sq(&self) -> f64 {
        self.r_a * self.r_a + self.r_b * self.r_b + self.r_c * self.r_c
    }
}

/// `(‖𝔄T − TA‖_F, ‖𝔅 − TB‖_F, ‖ℭT − C‖_F)`.
pub fn residuals(
    blackbox: &StateSpace,
    t: &DMatrix<f64>,
    structured: &StateSpace,
) -> Result<Residuals> {
    let n_x = blackbox.dims().n_x;
    if structured.dims() != blackbox.dims() || t.shape() != (n_x, n_x) {
        return Err(Error::Dimension(format!(
            "blackbox {:?}, structured {:?}, T {}x{}",
            blackbox.dims(),
            structured.dims(),
            t.nrows(),
            t.ncols()
        )));
    }
    Ok(Residuals {
        r_a: (blackbox.a() * t - t * structured.a()).norm(),
        r_b: (blackbox.b() - t * structured.b()).norm(),
        r_c: (blackbox.c() * t - structured.c()).norm(),
    })
}

/// Ground-truth instance: the structured model, its similarity transform, and
/// the black-box realization they produce.
#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub blackbox: StateSpace,
    pub truth: StateSpace,
    pub theta: ThetaVector,
    pub t: DMatrix<f64>,
}

/// Random `n x n` orthogonal matrix (QR of a Gaussian matrix, sign-normalized).
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random `T = U Σ Vᵀ` with singular values log-uniform in `[1, cond_max]`.
pub fn random_similarity(n_x: usize, cond_max: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let u = random_orthogonal(n_x, rng);
    let v = random_orthogonal(n_x, rng);
    let log_max = cond_max.ln();
    let sigma = DVector::from_fn(n_x, |_, _| (rng.random::<f64>() * log_max).exp());
    u * DMatrix::from_diagonal(&sigma) * v.transpose()
}

/// Draws a similarity transform with `cond(T) ≤ cond_max` and returns the
/// black-box realization of `eval_structure(s, θ)` it induces. Deterministic
/// in `seed`.
pub fn generate_instance(
    s: &AffineStructure,
    theta: &ThetaVector,
    seed: u64,
    cond_max: f64,
) -> Result<GeneratedInstance> {
    if !(cond_max > 1.0) || !cond_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cond_max must be a finite value > 1 (got {cond_max})"
        )));
    }
    let truth = eval_structure(s, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_similarity(s.dims().n_x, cond_max, &mut rng);
    let blackbox = apply_similarity(&truth, &t)?;
    Ok(GeneratedInstance {
        blackbox,
        truth,
        theta: theta.clone(),
        t,
    })
}

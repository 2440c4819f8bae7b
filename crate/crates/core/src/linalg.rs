//! Small dense helpers on top of nalgebra's SVD: numerical rank thresholds,
//! null-space bases, pseudo-inverses and condition numbers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative rank tolerance `max(rows, cols) * eps`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

/// Ratio `sigma_min / sigma_max` of a square matrix; zero for the zero matrix.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    if s.is_empty() {
        return 0.0;
    }
    let max = s[0];
    let min = s[s.len() - 1];
    if max == 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

/// 2-norm condition number; `inf` when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let r = inverse_condition(m);
    if r == 0.0 {
        f64::INFINITY
    } else {
        1.0 / r
    }
}

/// Orthonormal basis of `null(m)`: right singular vectors whose singular value
/// is at most `rel_tol * sigma_max`.
///
/// Wide matrices are padded with zero rows so the SVD yields the full set of
/// right singular vectors.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    let square = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max;

    let kept: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] <= cutoff).collect();
    let mut z = DMatrix::zeros(cols, kept.len());
    for (j, &i) in kept.iter().enumerate() {
        z.set_column(j, &v_t.row(i).transpose());
    }
    z
}

/// Moore-Penrose pseudo-inverse via SVD, dropping singular values below
/// `rel_tol * sigma_max`. Also returns the numerical rank.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max;

    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for i in 0..sigma.len() {
        if sigma[i] > cutoff && sigma[i] > 0.0 {
            rank += 1;
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / sigma[i];
        }
    }
    (out, rank)
}

/// Inverse of a square matrix, refusing anything with
/// `sigma_min < rcond_min * sigma_max`.
pub fn checked_inverse(m: &DMatrix<f64>, rcond_min: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let ratio = inverse_condition(m);
    if !(ratio >= rcond_min) {
        return Err(Error::Singular { ratio });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { ratio })
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianCheck {
    pub max_rel_err: f64,
    pub worst_row: usize,
    pub worst_col: usize,
    pub pass: bool,
}

fn step_for(xi: f64, h_scale: f64) -> f64 {
    h_scale * (1.0 + xi.abs())
}

/// Central-difference gradient with per-coordinate step `h_scale·(1 + |xᵢ|)`.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h_scale: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut out = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = step_for(x[i], h_scale);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::ProbeNotFinite { coord: i });
        }
        out[i] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector-valued map; column `j` holds the
/// derivative with respect to `x[j]`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h_scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = step_for(x[j], h_scale);
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        if fp.len() != m || fm.len() != m || fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ProbeNotFinite { coord: j });
        }
        out.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(out)
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

/// Compares `grad` against central differences of `f` at `x`, using the
/// error measure `|analytic − fd| / max(1, |fd|)`.
pub fn check_gradient<F, G>(f: F, grad: G, x: &DVector<f64>, rel_tol: f64) -> Result<GradCheck>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fd = fd_gradient(f, x, DEFAULT_FD_STEP)?;
    let analytic = grad(x);
    if analytic.len() != fd.len() {
        return Err(Error::Dimension(format!(
            "gradient has length {}, expected {}",
            analytic.len(),
            fd.len()
        )));
    }
    let (worst_coord, max_rel_err) = analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &b)| rel_err(a, b))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheck {
        max_rel_err,
        worst_coord,
        pass: max_rel_err <= rel_tol,
    })
}

/// Entrywise version of [`check_gradient`] for a vector-valued map.
pub fn check_jacobian<F>(
    f: F,
    analytic: &DMatrix<f64>,
    x: &DVector<f64>,
    rel_tol: f64,
) -> Result<JacobianCheck>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fd = fd_jacobian(f, x, DEFAULT_FD_STEP)?;
    if fd.shape() != analytic.shape() {
        return Err(Error::Dimension(format!(
            "Jacobian is {:?}, expected {:?}",
            analytic.shape(),
            fd.shape()
        )));
    }
    let mut report = JacobianCheck {
        max_rel_err: 0.0,
        worst_row: 0,
        worst_col: 0,
        pass: true,
    };
    for j in 0..fd.ncols() {
        for i in 0..fd.nrows() {
            let e = rel_err(analytic[(i, j)], fd[(i, j)]);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_row = i;
                report.worst_col = j;
            }
        }
    }
    report.pass = report.max_rel_err <= rel_tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let f = |x: &DVector<f64>| x.norm_squared();
        let g = fd_gradient(f, &DVector::from_vec(vec![1.0, 2.0]), DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn linear_gradient_is_exact() {
        let f = |x: &DVector<f64>| 3.0 * x[0] - 0.5 * x[1] + 7.0;
        let g = fd_gradient(f, &DVector::from_vec(vec![0.3, -1.1]), DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn probe_failure_names_coordinate() {
        let f = |x: &DVector<f64>| if x[1] > 1.0 { f64::INFINITY } else { x[0] };
        let err = fd_gradient(f, &DVector::from_vec(vec![0.0, 1.0]), DEFAULT_FD_STEP).unwrap_err();
        assert!(matches!(err, Error::ProbeNotFinite { coord: 1 }));
    }

    #[test]
    fn consistent_gradient_passes() {
        let f = |x: &DVector<f64>| x[0].sin() * x[1] + x[1].powi(3);
        let g = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0].cos() * x[1], x[0].sin() + 3.0 * x[1] * x[1]])
        };
        let r = check_gradient(f, g, &DVector::from_vec(vec![0.4, -0.7]), 1e-6).unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err <= 1e-8);

        // f linear: analytic and fd coincide to rounding
        let f = |x: &DVector<f64>| 2.0 * x[0] - x[1];
        let g = |_: &DVector<f64>| DVector::from_vec(vec![2.0, -1.0]);
        let r = check_gradient(f, g, &DVector::from_vec(vec![0.1, 0.2]), 1e-6).unwrap();
        assert!(r.max_rel_err <= 1e-10);
    }

    #[test]
    fn sign_flipped_gradient_fails() {
        let f = |x: &DVector<f64>| 0.5 * x[0] * x[0] + 2.0 * x[1] * x[1];
        let g = |x: &DVector<f64>| DVector::from_vec(vec![x[0], -4.0 * x[1]]);
        let r = check_gradient(f, g, &DVector::from_vec(vec![1.0, 1.0]), 1e-6).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_coord, 1);
    }

    #[test]
    fn jacobian_check() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1], x[0].exp()]);
        let x: DVector<f64> = DVector::from_vec(vec![0.3, 2.0]);
        let jac = DMatrix::from_row_slice(2, 2, &[x[1], x[0], x[0].exp(), 0.0]);
        assert!(check_jacobian(f, &jac, &x, 1e-6).unwrap().pass);
        let mut bad = jac.clone();
        bad[(1, 0)] += 0.1;
        let r = check_jacobian(f, &bad, &x, 1e-6).unwrap();
        assert!(!r.pass);
        assert_eq!((r.worst_row, r.worst_col), (1, 0));
    }
}

//! JSON file formats. Matrices are nested row-major arrays.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AffineStructure, Dims, Residuals, StateSpace};
use crate::optim::TraceEntry;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parses a row-major nested array, checking it is `nrows x ncols`.
pub fn from_rows(rows: &Rows, nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(Error::Schema(format!(
            "{name}: expected {nrows}x{ncols}, got {} rows of length {}",
            rows.len(),
            if rows.iter().all(|r| r.len() == got_cols) {
                got_cols.to_string()
            } else {
                "varying".to_string()
            }
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Square matrix of any size, or an error for ragged input.
fn square_from_rows(rows: &Rows, name: &str) -> Result<DMatrix<f64>> {
    from_rows(rows, rows.len(), rows.len(), name)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Schema(format!("{}: {e}", path.display()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct StateSpaceFile {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub A: Rows,
    pub B: Rows,
    pub C: Rows,
}

impl StateSpaceFile {
    pub fn from_model(m: &StateSpace) -> Self {
        let d = m.dims();
        Self {
            n_x: d.n_x,
            n_u: d.n_u,
            n_y: d.n_y,
            A: to_rows(m.a()),
            B: to_rows(m.b()),
            C: to_rows(m.c()),
        }
    }

    pub fn to_model(&self) -> Result<StateSpace> {
        let d = Dims::new(self.n_x, self.n_u, self.n_y).map_err(schema)?;
        StateSpace::new(
            from_rows(&self.A, d.n_x, d.n_x, "A")?,
            from_rows(&self.B, d.n_x, d.n_u, "B")?,
            from_rows(&self.C, d.n_y, d.n_x, "C")?,
        )
        .map_err(schema)
    }
}

/// `[vec A; vec B; vec C] = kappa0 + K θ` with `K` stored row-major,
/// `n_delta x n_theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct StructureFile {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_theta: usize,
    pub kappa0: Vec<f64>,
    pub K: Rows,
}

impl StructureFile {
    pub fn from_structure(s: &AffineStructure) -> Self {
        let d = s.dims();
        Self {
            n_x: d.n_x,
            n_u: d.n_u,
            n_y: d.n_y,
            n_theta: s.n_theta(),
            kappa0: s.kappa0().iter().copied().collect(),
            K: to_rows(s.k()),
        }
    }

    pub fn to_structure(&self) -> Result<AffineStructure> {
        let d = Dims::new(self.n_x, self.n_u, self.n_y).map_err(schema)?;
        if self.kappa0.len() != d.n_delta() {
            return Err(Error::Schema(format!(
                "kappa0: expected length {}, got {}",
                d.n_delta(),
                self.kappa0.len()
            )));
        }
        let k = if self.n_theta == 0 {
            DMatrix::zeros(d.n_delta(), 0)
        } else {
            from_rows(&self.K, d.n_delta(), self.n_theta, "K")?
        };
        AffineStructure::new(d, DVector::from_column_slice(&self.kappa0), k).map_err(schema)
    }
}

/// Ground truth written by `generate`. Also accepted as a least-squares
/// initial point, since it carries `theta` and `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct TruthFile {
    pub theta: Vec<f64>,
    pub T: Rows,
    pub structured: StateSpaceFile,
}

/// A `(θ, T)` pair. Extra fields are ignored so that truth files and run
/// reports can be read through this type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PointFile {
    #[serde(alias = "theta_hat")]
    pub theta: Vec<f64>,
    #[serde(alias = "T_hat")]
    pub T: Rows,
}

impl PointFile {
    pub fn parse(&self, s: &AffineStructure) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.theta.len() != s.n_theta() {
            return Err(Error::Dimension(format!(
                "theta has length {}, structure expects {}",
                self.theta.len(),
                s.n_theta()
            )));
        }
        let n_x = s.dims().n_x;
        let t = from_rows(&self.T, n_x, n_x, "T").map_err(|e| match e {
            Error::Schema(m) => Error::Dimension(m),
            other => other,
        })?;
        Ok((DVector::from_column_slice(&self.theta), t))
    }
}

/// `T` from a truth file with shape checking against the embedded model.
pub fn truth_transform(truth: &TruthFile) -> Result<DMatrix<f64>> {
    square_from_rows(&truth.T, "T")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ResidualsReport {
    pub r_A: f64,
    pub r_B: f64,
    pub r_C: f64,
}

impl From<Residuals> for ResidualsReport {
    fn from(r: Residuals) -> Self {
        Self {
            r_A: r.r_a,
            r_B: r.r_b,
            r_C: r.r_c,
        }
    }
}

impl ResidualsReport {
    pub fn max(&self) -> f64 {
        self.r_A.max(self.r_B).max(self.r_C)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullspaceDiagnostics {
    pub status: String,
    pub f_s_final: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub n_z: usize,
    pub cond_t: f64,
    pub starts: usize,
    pub excluded_starts: usize,
    pub residuals: ResidualsReport,
    pub wall_time_ms: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsqDiagnostics {
    pub status: String,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub cond_t: f64,
    pub degenerate_t: bool,
    pub residuals: ResidualsReport,
    pub wall_time_ms: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nullspace: Option<NullspaceDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lsq: Option<LsqDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RunReport {
    pub method: String,
    pub theta_hat: Vec<f64>,
    pub T_hat: Rows,
    pub residuals: ResidualsReport,
    pub objective_final: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta_error: Option<f64>,
    pub timing_ms: f64,
    pub status: String,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub residuals: ResidualsReport,
    pub max_residual: f64,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta_error: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradPointReport {
    pub index: usize,
    pub max_rel_err: f64,
    /// Coordinate (or `row,col` entry for Jacobians) with the largest error.
    pub worst: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckGradReport {
    pub which: String,
    pub rel_tol: f64,
    pub resampled: usize,
    pub max_rel_err: f64,
    pub points: Vec<GradPointReport>,
    pub pass: bool,
}

fn schema(e: Error) -> Error {
    match e {
        Error::Schema(_) => e,
        other => Error::Schema(other.to_string()),
    }
}

/// Relative error `‖θ̂ − θ‖ / max(‖θ‖, eps)`.
pub fn theta_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "theta has length {}, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok((estimate - truth).norm() / truth.norm().max(f64::EPSILON))
}

//! Canonical identifiable structures shipped with the crate.

use nalgebra::{DMatrix, DVector};

use crate::model::{AffineStructure, Dims, ThetaVector};

fn build(dims: Dims, kappa0: &[(usize, f64)], k: &[(usize, usize, f64)], n_theta: usize) -> AffineStructure {
    let mut kap = DVector::zeros(dims.n_delta());
    for &(i, v) in kappa0 {
        kap[i] = v;
    }
    let mut km = DMatrix::zeros(dims.n_delta(), n_theta);
    for &(i, j, v) in k {
        km[(i, j)] = v;
    }
    AffineStructure::new(dims, kap, km).expect("bundled structure is well-formed")
}

/// `A = θ₁`, `B = θ₂`, `C = 0.5`.
pub fn scalar() -> AffineStructure {
    let dims = Dims::new(1, 1, 1).unwrap();
    build(dims, &[(2, 0.5)], &[(0, 0, 1.0), (1, 1, 1.0)], 2)
}

/// Mass-spring-damper with position output:
/// `A = [[0, 1], [-θ₁, -θ₂]]`, `B = [0; θ₃]`, `C = [1, 0]`.
pub fn mass_spring() -> AffineStructure {
    let dims = Dims::new(2, 1, 1).unwrap();
    // vec(A) = [A00, A10, A01, A11], vec(B) at 4..6, vec(C) at 6..8
    build(
        dims,
        &[(2, 1.0), (6, 1.0)],
        &[(1, 0, -1.0), (3, 1, -1.0), (5, 2, 1.0)],
        3,
    )
}

/// Closed three-compartment catenary, dosed in compartment 1 and sampled in
/// the two end compartments:
///
/// ```text
/// A = [[-θ₁,  θ₂,       0  ],
///      [ θ₁, -θ₂ - θ₃,  θ₄ ],
///      [ 0,   θ₃,      -θ₄ ]],   B = e₁,   C = [e₁ᵀ; e₃ᵀ]
/// ```
pub fn compartmental() -> AffineStructure {
    let dims = Dims::new(3, 1, 2).unwrap();
    // column-major index of A(i, j) is 3j + i; B at 9..12, C(i, j) at 12 + 2j + i
    build(
        dims,
        &[(9, 1.0), (12, 1.0), (17, 1.0)],
        &[
            (0, 0, -1.0),
            (1, 0, 1.0),
            (3, 1, 1.0),
            (4, 1, -1.0),
            (4, 2, -1.0),
            (5, 2, 1.0),
            (7, 3, 1.0),
            (8, 3, -1.0),
        ],
        4,
    )
}

/// A bundled structure together with a representative parameter value.
#[derive(Clone, Debug)]
pub struct Bundled {
    pub name: &'static str,
    pub structure: AffineStructure,
    pub theta: ThetaVector,
}

pub fn bundled() -> Vec<Bundled> {
    vec![
        Bundled {
            name: "scalar",
            structure: scalar(),
            theta: DVector::from_vec(vec![3.0, 2.0]),
        },
        Bundled {
            name: "mass-spring",
            structure: mass_spring(),
            theta: DVector::from_vec(vec![4.0, 0.5, 1.0]),
        },
        Bundled {
            name: "compartmental",
            structure: compartmental(),
            theta: DVector::from_vec(vec![0.8, 0.5, 0.3, 0.6]),
        },
    ]
}

pub fn by_name(name: &str) -> Option<Bundled> {
    bundled().into_iter().find(|b| b.name == name)
}

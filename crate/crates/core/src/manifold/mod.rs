//! Dense linear algebra on the orthogonal group `O(Q)` and its Lie algebra
//! `o(Q)` of antisymmetric matrices.

pub mod decomp;
mod expm;
mod matrix;

pub use expm::expm;
pub use matrix::Matrix;

use num_traits::Float;

use crate::error::{Error, Result};

/// Bound on `‖RᵀR − 𝟙‖_F` accepted for an orthogonal matrix.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Bound on `‖A + Aᵀ‖_F / max(1, ‖A‖_F)` accepted for an antisymmetric matrix.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

fn require_square(m: &Matrix) -> Result<()> {
    if m.is_square() && m.rows() >= 1 {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: m.rows(), found: m.cols() })
    }
}

/// `‖MᵀM − 𝟙‖_F`
pub fn orthogonality_defect(m: &Matrix) -> f64 {
    (&(&m.transpose() * m) - &Matrix::identity(m.cols())).frobenius_norm()
}

/// An element of `O(Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalMatrix(Matrix);

impl OrthogonalMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        require_square(&m)?;
        let deviation = orthogonality_defect(&m);
        if deviation <= ORTHOGONALITY_TOL {
            Ok(Self(m))
        } else {
            Err(Error::NotOrthogonal { deviation })
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    /// Skips the orthogonality check. Only for intermediate stages of
    /// ambient-space integrators, which reproject before handing states out.
    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    /// Planar rotation by `angle` in the `(i, j)` coordinate plane.
    pub fn givens(dim: usize, i: usize, j: usize, angle: f64) -> Self {
        let mut m = Matrix::identity(dim);
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// The inverse, `Rᵀ`.
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, x: &[f64]) -> alloc::vec::Vec<f64> {
        self.0.mul_vec(x)
    }

    /// `Rᵀ x`
    pub fn apply_transpose(&self, x: &[f64]) -> alloc::vec::Vec<f64> {
        self.0.tr_mul_vec(x)
    }

    pub fn compose(&self, other: &OrthogonalMatrix) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn defect(&self) -> f64 {
        orthogonality_defect(&self.0)
    }

    /// Snaps back onto the group through the polar factor. Used to cancel
    /// rounding drift accumulated over many retractions.
    pub fn reproject(&self) -> Self {
        match polar_decompose(&self.0) {
            Ok((_, r)) => r,
            Err(_) => self.clone(),
        }
    }
}

/// An element of `o(Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntisymmetricMatrix(Matrix);

impl AntisymmetricMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        require_square(&m)?;
        let deviation = (&m + &m.transpose()).frobenius_norm();
        if deviation <= ANTISYMMETRY_TOL * m.frobenius_norm().max(1.0) {
            Ok(Self(m))
        } else {
            Err(Error::NotAntisymmetric { deviation })
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim, dim))
    }

    /// Basis element `e_i e_jᵀ − e_j e_iᵀ`.
    pub fn basis(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        m[(i, j)] = 1.0;
        m[(j, i)] = -1.0;
        Self(m)
    }

    /// Upper-triangle entries are mirrored with opposite sign; `f` is only
    /// called for `i < j`.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i + 1..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, k: f64) -> Self {
        Self(self.0.scale(k))
    }

    pub fn norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    /// `[A, B]`, which stays in `o(Q)`.
    pub fn bracket(&self, other: &Self) -> Self {
        antisym_project(&self.0.commutator(&other.0))
    }
}

/// Projection `A ↦ (A − Aᵀ)/2` onto `o(Q)`.
pub fn antisym_project(a: &Matrix) -> AntisymmetricMatrix {
    AntisymmetricMatrix(a.antisymmetric_part())
}

/// Polar decomposition `W = P R` with `P = |W|` symmetric positive definite
/// and `R` orthogonal, computed from the SVD `W = UΣVᵀ` as `P = UΣUᵀ`,
/// `R = UVᵀ`.
pub fn polar_decompose(w: &Matrix) -> Result<(Matrix, OrthogonalMatrix)> {
    require_square(w)?;
    let d = decomp::svd(w)?;
    let smax = d.singular_values[0];
    let smin = *d.singular_values.last().expect("nonempty");
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        return Err(Error::SingularInput { ratio });
    }
    let n = w.rows();
    let p = Matrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| d.u[(i, k)] * d.singular_values[k] * d.u[(j, k)]).sum()
    })
    .symmetric_part();
    let r = &d.u * &d.v.transpose();
    Ok((p, OrthogonalMatrix(r)))
}

/// `exp(A)` for antisymmetric `A`, an element of `SO(Q)`.
pub fn expm_antisym(a: &AntisymmetricMatrix) -> OrthogonalMatrix {
    let e = expm(&a.0);
    if orthogonality_defect(&e) <= 1e-13 {
        OrthogonalMatrix(e)
    } else {
        // very large generators lose a few digits in the squaring phase
        OrthogonalMatrix(e).reproject()
    }
}

/// `exp(step · Ω) R`
pub fn retract(r: &OrthogonalMatrix, omega: &AntisymmetricMatrix, step: f64) -> OrthogonalMatrix {
    if step == 0.0 || omega.0.max_abs() == 0.0 {
        return r.clone();
    }
    expm_antisym(&omega.scale(step)).compose(r)
}

//! Output-layer flow for clustered data that every hidden layer leaves fixed.
//!
//! The flow `Ẇ = −(1/N)(WX − Y)Xᵀ` is linear in `W` and solved in closed
//! form: with `A = XXᵀ/N` and `W* = Y Xᵀ(XXᵀ)⁻¹`,
//! `W(s) = W* + (W(0) − W*) e^{−sA}`.

use crate::error::{Error, Result};
use crate::manifold::decomp::{symmetric_eigen, symmetric_function, Lu};
use crate::manifold::Matrix;
use num_traits::Float;

/// Gram matrices whose `λ_min/λ_max` is at or below this are rejected.
pub const GRAM_MIN_RATIO: f64 = 1e-10;

fn gram(x: &Matrix) -> Result<Matrix> {
    let g = &(x * &x.transpose());
    let eig = symmetric_eigen(g)?;
    let lmax = *eig.values.last().expect("nonempty");
    let lmin = eig.values[0];
    if !(lmax > 0.0) || lmin <= GRAM_MIN_RATIO * lmax {
        let ratio = if lmax > 0.0 { lmin / lmax } else { 0.0 };
        return Err(Error::SingularGram { ratio });
    }
    Ok(g.clone())
}

/// `Y 𝒫 = Y Xᵀ(XXᵀ)⁻¹`, the limit of the flow.
pub fn clustered_limit(x: &Matrix, y_ext: &Matrix) -> Result<Matrix> {
    if x.rows() != y_ext.rows() || x.cols() != y_ext.cols() {
        return Err(Error::DimensionMismatch { expected: x.cols(), found: y_ext.cols() });
    }
    let g = gram(x)?;
    // G Zᵀ = X Yᵀ, so Z = Y Xᵀ G⁻¹ since G is symmetric
    let rhs = x * &y_ext.transpose();
    Ok(Lu::new(&g)?.solve(&rhs).transpose())
}

/// `W(s)` for initial output map `w0` (`Q×Q`), data `x` and targets `y_ext`
/// (both `Q×N`, one column per training point).
pub fn clustered_explicit(w0: &Matrix, x: &Matrix, y_ext: &Matrix, s: f64) -> Result<Matrix> {
    if !w0.is_square() || w0.rows() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: w0.rows() });
    }
    let w_star = clustered_limit(x, y_ext)?;
    if s == 0.0 {
        return Ok(w0.clone());
    }
    let n = x.cols() as f64;
    let a = (x * &x.transpose()).scale(1.0 / n);
    let decay = symmetric_function(&a, |l| (-s * l).exp())?;
    Ok(&w_star + &(&(w0 - &w_star) * &decay))
}

/// `−(1/N)(WX − Y)Xᵀ`
pub fn clustered_rhs(w: &Matrix, x: &Matrix, y_ext: &Matrix) -> Matrix {
    let n = x.cols() as f64;
    (&(&(w * x) - y_ext) * &x.transpose()).scale(-1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Matrix, Matrix, Matrix) {
        let w0 = Matrix::from_rows(&[[1.0, 0.5], [-0.3, 2.0]]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.2, -0.5, 2.0], [0.0, 1.0, 0.7, -1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.5, 1.0, -1.0, 0.0], [2.0, 0.0, 1.0, 1.0]]).unwrap();
        (w0, x, y)
    }

    #[test]
    fn starts_at_initial_map() {
        let (w0, x, y) = sample();
        assert_eq!(clustered_explicit(&w0, &x, &y, 0.0).unwrap(), w0);
    }

    #[test]
    fn limit_is_a_fixed_point() {
        let (_, x, y) = sample();
        let w_star = clustered_limit(&x, &y).unwrap();
        assert!(clustered_rhs(&w_star, &x, &y).max_abs() < 1e-13);
        let w = clustered_explicit(&w_star, &x, &y, 3.0).unwrap();
        assert!((&w - &w_star).max_abs() < 1e-13);
    }

    #[test]
    fn identity_data_decays_at_rate_one_over_q() {
        let q = 3;
        let x = Matrix::identity(q);
        let y = Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, -1.0, 1.0], [3.0, 0.5, 0.5]]).unwrap();
        let w0 = Matrix::from_rows(&[[0.1, 0.0, 0.3], [1.0, 1.0, -1.0], [0.0, 0.2, 0.0]]).unwrap();
        let s = 1.7;
        let e = (-s / q as f64).exp();
        let expected = &w0.scale(e) + &y.scale(1.0 - e);
        let w = clustered_explicit(&w0, &x, &y, s).unwrap();
        assert!((&w - &expected).max_abs() < 1e-13);
    }

    #[test]
    fn rank_deficient_data_is_rejected() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        let r = clustered_explicit(&Matrix::identity(2), &x, &x, 1.0);
        assert!(matches!(r, Err(Error::SingularGram { .. })));
    }
}

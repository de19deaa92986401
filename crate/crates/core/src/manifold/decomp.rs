//! LU, singular value and symmetric eigen decompositions for small dense
//! matrices. All routines are Jacobi or Gaussian-elimination based and
//! intended for dimensions up to a few hundred.

use alloc::vec::Vec;

use num_traits::Float;

use super::Matrix;
use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;

/// LU factorization with partial pivoting, `PA = LU`.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch { expected: a.rows(), found: a.cols() });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= f64::EPSILON * scale * 1e-3 {
                return Err(Error::SingularInput { ratio: pivot / scale });
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.rows()).map(|i| self.lu[(i, i)]).product::<f64>() * self.sign
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let cols: Vec<Vec<f64>> = (0..b.cols()).map(|j| self.solve_vec(&b.column(j))).collect();
        Matrix::from_columns(&cols).expect("columns share the row count")
    }
}

/// Thin SVD `A = U diag(σ) Vᵀ` of a square matrix, σ sorted descending.
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.rows(), found: a.cols() });
    }
    let n = a.rows();
    let mut u = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut u, &mut v] {
                    for i in 0..n {
                        let (xp, xq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * xp - s * xq;
                        m[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> =
        (0..n).map(|j| (j, (0..n).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let singular_values: Vec<f64> = order.iter().map(|o| o.1).collect();
    let u_sorted = Matrix::from_fn(n, n, |i, k| {
        let (j, sigma) = order[k];
        if sigma > 0.0 { u[(i, j)] / sigma } else { 0.0 }
    });
    let v_sorted = Matrix::from_fn(n, n, |i, k| v[(i, order[k].0)]);
    Ok(Svd { u: u_sorted, singular_values, v: v_sorted })
}

/// Eigen-decomposition `A = V diag(λ) Vᵀ` of a symmetric matrix.
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigenvalue iteration. Only the symmetric part of `a` is used.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.rows(), found: a.cols() });
    }
    let n = a.rows();
    let mut m = a.symmetric_part();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|i| (i, m[(i, i)])).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let values = order.iter().map(|o| o.1).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k].0)]);
    Ok(SymmetricEigen { values, vectors })
}

/// Applies `f` to the spectrum of a symmetric matrix: `V f(Λ) Vᵀ`.
pub fn symmetric_function(a: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let eig = symmetric_eigen(a)?;
    let n = a.rows();
    let fv: Vec<f64> = eig.values.iter().map(|&l| f(l)).collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| eig.vectors[(i, k)] * fv[k] * eig.vectors[(j, k)]).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix {
        Matrix::from_rows(&[[4.0, 1.0, -2.0], [0.5, 3.0, 1.0], [-1.0, 2.0, 5.0]]).unwrap()
    }

    #[test]
    fn lu_solves_and_determinant() {
        let a = sample();
        let lu = Lu::new(&a).unwrap();
        let x = lu.solve_vec(&[1.0, 2.0, 3.0]);
        let back = a.mul_vec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-13);
        }
        // cofactor expansion
        let det = 4.0 * (3.0 * 5.0 - 1.0 * 2.0) - 1.0 * (0.5 * 5.0 + 1.0) + (-2.0) * (0.5 * 2.0 + 3.0);
        assert!((lu.determinant() - det).abs() < 1e-12);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(Lu::new(&a), Err(Error::SingularInput { .. })));
    }

    #[test]
    fn svd_reconstructs() {
        let a = sample();
        let d = svd(&a).unwrap();
        let recon = &(&d.u * &Matrix::diagonal(&d.singular_values)) * &d.v.transpose();
        assert!((&recon - &a).frobenius_norm() < 1e-12);
        assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_reconstructs() {
        let a = sample().symmetric_part();
        let e = symmetric_eigen(&a).unwrap();
        let recon = &(&e.vectors * &Matrix::diagonal(&e.values)) * &e.vectors.transpose();
        assert!((&recon - &a).frobenius_norm() < 1e-12);
        assert!((e.values.iter().sum::<f64>() - a.trace()).abs() < 1e-12);
    }
}

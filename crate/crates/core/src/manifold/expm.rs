//! Matrix exponential by scaling and squaring with a fixed degree-13 Padé
//! approximant.

use num_traits::Float;

use super::decomp::Lu;
use super::Matrix;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the [13/13] approximant is accurate to unit roundoff.
const THETA_13: f64 = 5.371920351148152;

/// `exp(A)` for a square matrix.
pub fn expm(a: &Matrix) -> Matrix {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.rows();
    let norm = a.norm_1();
    if norm == 0.0 {
        return Matrix::identity(n);
    }
    let squarings = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a.scale(0.5f64.powi(squarings));

    let ident = Matrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let mut inner_u = a6.scale(b[13]);
    inner_u.add_scaled(b[11], &a4);
    inner_u.add_scaled(b[9], &a2);
    let mut u = &a6 * &inner_u;
    u.add_scaled(b[7], &a6);
    u.add_scaled(b[5], &a4);
    u.add_scaled(b[3], &a2);
    u.add_scaled(b[1], &ident);
    let u = &a * &u;

    let mut inner_v = a6.scale(b[12]);
    inner_v.add_scaled(b[10], &a4);
    inner_v.add_scaled(b[8], &a2);
    let mut v = &a6 * &inner_v;
    v.add_scaled(b[6], &a6);
    v.add_scaled(b[4], &a4);
    v.add_scaled(b[2], &a2);
    v.add_scaled(b[0], &ident);

    let numer = &v + &u;
    let denom = &v - &u;
    // V − U is well conditioned for ‖A‖₁ ≤ θ₁₃.
    let mut result = Lu::new(&denom).expect("Padé denominator is nonsingular").solve(&numer);
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&Matrix::zeros(3, 3)), Matrix::identity(3));
    }

    #[test]
    fn exp_of_diagonal() {
        let a = Matrix::diagonal(&[1.0, -2.0, 0.5]);
        let e = expm(&a);
        for (i, d) in [1.0f64, -2.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - d.exp()).abs() < 1e-14 * d.exp().max(1.0));
        }
    }

    #[test]
    fn exp_of_nilpotent() {
        let a = Matrix::from_rows(&[[0.0, 3.0], [0.0, 0.0]]).unwrap();
        let e = expm(&a);
        let expected = Matrix::from_rows(&[[1.0, 3.0], [0.0, 1.0]]).unwrap();
        assert!((&e - &expected).max_abs() < 1e-15);
    }

    #[test]
    fn large_norm_uses_squaring() {
        let a = Matrix::diagonal(&[20.0, -20.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] / 20.0f64.exp() - 1.0).abs() < 1e-12);
        assert!((e[(1, 1)] / (-20.0f64).exp() - 1.0).abs() < 1e-10);
    }
}

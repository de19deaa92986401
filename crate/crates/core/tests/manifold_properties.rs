use proptest::prelude::*;
use truncflow_core::manifold::{antisym_project, expm, expm_antisym, polar_decompose, retract, Matrix};
use truncflow_core::scenario::{self, gaussian_matrix, random_antisymmetric, random_orthogonal};
use truncflow_core::{AntisymmetricMatrix, OrthogonalMatrix};

fn seeded_matrix(seed: u64, q: usize) -> Matrix {
    gaussian_matrix(&mut scenario::rng(seed), q, q, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn antisymmetric_part_splits_matrix(seed in any::<u64>(), q in 1usize..8) {
        let a = seeded_matrix(seed, q);
        let p = antisym_project(&a);
        let pm = p.as_matrix();
        prop_assert_eq!((pm + &pm.transpose()).max_abs(), 0.0);
        let rebuilt = pm + &a.symmetric_part();
        prop_assert!((&rebuilt - &a).frobenius_norm() <= 1e-14 * a.frobenius_norm().max(1.0));
        prop_assert_eq!(antisym_project(pm).into_matrix(), pm.clone());
        prop_assert_eq!(antisym_project(&a.symmetric_part()).as_matrix().max_abs(), 0.0);
    }

    #[test]
    fn polar_reconstructs(seed in any::<u64>(), q in 1usize..8) {
        let w = scenario::random_well_conditioned(&mut scenario::rng(seed), q);
        let (p, r) = polar_decompose(&w).unwrap();
        let back = &p * r.as_matrix();
        prop_assert!((&back - &w).frobenius_norm() <= 1e-10 * w.frobenius_norm());
        prop_assert!(r.defect() <= 1e-10);
        prop_assert!((&p - &p.transpose()).max_abs() == 0.0);
    }

    #[test]
    fn exponential_is_special_orthogonal(seed in any::<u64>(), q in 1usize..8, sd in 0.01f64..3.0) {
        let a = random_antisymmetric(&mut scenario::rng(seed), q, sd);
        let e = expm_antisym(&a);
        prop_assert!(e.defect() <= 1e-10);
        let det = truncflow_core::manifold::decomp::Lu::new(e.as_matrix()).unwrap().determinant();
        prop_assert!((det - 1.0).abs() <= 1e-10);
        let inv = expm(&a.scale(-1.0).into_matrix());
        prop_assert!((&(e.as_matrix() * &inv) - &Matrix::identity(q)).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn retraction_stays_on_group(seed in any::<u64>(), q in 2usize..8, step in 0.0f64..1.0) {
        let mut rng = scenario::rng(seed);
        let r = random_orthogonal(&mut rng, q);
        let omega = random_antisymmetric(&mut rng, q, 1.0);
        let moved = retract(&r, &omega, step);
        prop_assert!(moved.defect() <= 1e-10);
        if step == 0.0 {
            prop_assert_eq!(moved, r);
        }
    }

    /// For `f(R) = tr(CᵀR)` the derivative along `exp(sω)R` is
    /// `−tr(ω·π₋(C Rᵀ))`.
    #[test]
    fn trace_identity_for_linear_functionals(seed in any::<u64>(), q in 2usize..7) {
        let mut rng = scenario::rng(seed);
        let c = gaussian_matrix(&mut rng, q, q, 1.0);
        let r = random_orthogonal(&mut rng, q);
        let omega = random_antisymmetric(&mut rng, q, 1.0);
        let f = |e: f64| {
            let moved = expm_antisym(&omega.scale(e)).compose(&r);
            (&c.transpose() * moved.as_matrix()).trace()
        };
        let h = 1e-5;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        // ∂_R f = C
        let grad = antisym_project(&(&c * &r.as_matrix().transpose()));
        let analytic = -(omega.as_matrix() * grad.as_matrix()).trace();
        prop_assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3));
    }
}

#[test]
fn rejects_non_orthogonal_and_non_antisymmetric() {
    assert!(OrthogonalMatrix::new(Matrix::identity(3).scale(1.1)).is_err());
    assert!(AntisymmetricMatrix::new(Matrix::identity(2)).is_err());
}

#[test]
fn half_turn_generator() {
    let omega = AntisymmetricMatrix::new(Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap()).unwrap();
    let r = retract(&OrthogonalMatrix::identity(2), &omega, std::f64::consts::PI);
    assert!((r.as_matrix() + &Matrix::identity(2)).max_abs() < 1e-14);
}

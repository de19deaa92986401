use proptest::prelude::*;
use truncflow_core::manifold::decomp::Lu;
use truncflow_core::model::{classify_sector, euclidean_cost, standard_cost, truncation_map};
use truncflow_core::scenario::{self, gaussian_vec, random_general, random_orthogonal};
use truncflow_core::{vector, LayerParams, Matrix, ModelState, OrthogonalMatrix, TrainingSet};

fn random_layer(seed: u64, q: usize) -> (LayerParams, Vec<f64>) {
    let mut rng = scenario::rng(seed);
    let layer = LayerParams::new(random_orthogonal(&mut rng, q), gaussian_vec(&mut rng, q, 1.0)).unwrap();
    (layer, gaussian_vec(&mut rng, q, 2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn truncation_is_idempotent(seed in any::<u64>(), q in 1usize..8) {
        let (layer, x) = random_layer(seed, q);
        let once = truncation_map(&layer, &x).unwrap();
        let twice = truncation_map(&layer, &once).unwrap();
        prop_assert!(vector::max_abs(&vector::sub(&once, &twice)) <= 1e-12 * (1.0 + vector::max_abs(&once)));
    }

    #[test]
    fn sector_fixed_points(seed in any::<u64>(), q in 1usize..8) {
        let (layer, x) = random_layer(seed, q);
        let mask = classify_sector(&layer, &x).unwrap();
        let t = truncation_map(&layer, &x).unwrap();
        if mask.is_positive() {
            prop_assert!(vector::max_abs(&vector::sub(&t, &x)) <= 1e-12 * (1.0 + vector::max_abs(&x)));
        }
        if mask.is_negative() {
            prop_assert_eq!(t, vector::scale(layer.beta(), -1.0));
        }
    }

    /// With `W = D R` the truncation `W⁻¹σ(W(x + β)) − β` ignores `D`.
    #[test]
    fn diagonal_scaling_is_invisible(seed in any::<u64>(), q in 1usize..8) {
        let (layer, x) = random_layer(seed, q);
        let mut rng = scenario::rng(seed ^ 0x9e37);
        let d: Vec<f64> = gaussian_vec(&mut rng, q, 1.0).iter().map(|v| 0.1 + v.abs()).collect();
        let w = &Matrix::diagonal(&d) * layer.rotation().as_matrix();
        let shifted = vector::add(&x, layer.beta());
        let activated = vector::relu(&w.mul_vec(&shifted));
        let scaled = vector::sub(&Lu::new(&w).unwrap().solve_vec(&activated), layer.beta());
        let t = truncation_map(&layer, &x).unwrap();
        prop_assert!(vector::max_abs(&vector::sub(&scaled, &t)) <= 1e-12 * (1.0 + vector::max_abs(&t)));
    }
}

#[test]
fn documented_truncations() {
    let layer = LayerParams::identity(2);
    assert_eq!(truncation_map(&layer, &[2.0, 3.0]).unwrap(), vec![2.0, 3.0]);
    assert_eq!(truncation_map(&layer, &[-1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(truncation_map(&layer, &[2.0, -3.0]).unwrap(), vec![2.0, 0.0]);
}

#[test]
fn costs_agree_and_scale() {
    let mut rng = scenario::rng(3);
    for _ in 0..20 {
        let (state, data) = random_general(&mut rng, 3, 3, 3, 6).unwrap();
        let unit = state.with_layers(state.layers().to_vec());
        let unit = ModelState::new(unit.layers().to_vec(), Matrix::identity(3), unit.pulled_labels().to_vec()).unwrap();
        let e = euclidean_cost(&unit, &data).unwrap();
        assert!(e >= 0.0);
        assert!((standard_cost(&unit, &data).unwrap() - e).abs() <= 1e-12 * (1.0 + e));
        let doubled_labels: Vec<Vec<f64>> = unit.labels().iter().map(|y| vector::scale(y, 2.0)).collect();
        let doubled = ModelState::new(unit.layers().to_vec(), Matrix::identity(3).scale(2.0), doubled_labels).unwrap();
        assert!((standard_cost(&doubled, &data).unwrap() - 4.0 * e).abs() <= 1e-12 * (1.0 + e));
    }
}

#[test]
fn collapsed_data_costs_label_offsets() {
    let labels = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
    let layers = vec![
        LayerParams::new(OrthogonalMatrix::identity(2), vec![-10.0, -10.0]).unwrap(),
        LayerParams::new(OrthogonalMatrix::new(Matrix::identity(2).scale(-1.0)).unwrap(), vec![-11.0, -11.0]).unwrap(),
    ];
    let w = Matrix::from_rows(&[[2.0, 1.0], [0.0, 1.0]]).unwrap();
    let state = ModelState::new(layers, w.clone(), labels.clone()).unwrap();
    // cluster 0 lands on −β⁽⁰⁾ and passes layer 1 untouched; cluster 1
    // passes layer 0 and is collapsed by layer 1
    let data = TrainingSet::new(vec![vec![vec![-20.0, -15.0]], vec![vec![12.0, 13.0], vec![15.0, 11.5]]]).unwrap();
    assert_eq!(state.full_truncation(&data.cluster(0)[0]).unwrap(), vec![10.0, 10.0]);
    assert_eq!(state.full_truncation(&data.cluster(1)[1]).unwrap(), vec![11.0, 11.0]);
    let expected: f64 = (0..2)
        .map(|l| {
            let out = w.mul_vec(&vector::scale(state.layer(l).beta(), -1.0));
            0.5 * vector::norm(&vector::sub(&out, &labels[l])).powi(2)
        })
        .sum();
    assert!((standard_cost(&state, &data).unwrap() - expected).abs() <= 1e-12 * expected);
}

#[test]
fn zero_cost_exactly_at_labels() {
    let state = ModelState::new(
        vec![LayerParams::new(OrthogonalMatrix::identity(2), vec![-1.0, -1.0]).unwrap()],
        Matrix::identity(2),
        vec![vec![1.0, 1.0]],
    )
    .unwrap();
    let data = TrainingSet::new(vec![vec![vec![0.5, 0.2], vec![-3.0, 1.0]]]).unwrap();
    assert_eq!(euclidean_cost(&state, &data).unwrap(), 0.0);
    let moved = TrainingSet::new(vec![vec![vec![0.5, 1.2]]]).unwrap();
    assert!(euclidean_cost(&state, &moved).unwrap() > 0.0);
}

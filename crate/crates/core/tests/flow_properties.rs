use truncflow_core::flows::{
    collapsed_rhs, conserved_quantity, effective_rhs, general_rhs, integrate_collapsed, integrate_effective,
    integrate_general, one_dim_flow, CollapsedState, IntegratorOptions, LayerRhs, Trajectory,
};
use truncflow_core::oracle::{
    fd_directional_rotation, fd_grad_beta, fd_grad_collapsed, fd_grad_rotation, reference_integrate, FDSettings,
    REFERENCE_STEP,
};
use truncflow_core::scenario::{self, chain_separated, random_antisymmetric, random_general, random_separated};
use truncflow_core::{vector, Error, LayerParams, Matrix, ModelState, OrthogonalMatrix, TrainingSet};

fn state_distance(a: &ModelState, b: &ModelState) -> f64 {
    a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            vector::max_abs(&vector::sub(x.beta(), y.beta()))
                .max((x.rotation().as_matrix() - y.rotation().as_matrix()).max_abs())
        })
        .fold(0.0, f64::max)
}

fn check_descent_identity(traj: &Trajectory) -> usize {
    let mut checked = 0;
    // Simpson's rule over two equal steps sharing one sector pattern
    for w in traj.samples.windows(3) {
        let same_pattern = w.windows(2).all(|p| {
            p[0].per_layer.iter().zip(&p[1].per_layer).all(|(a, b)| a.truncated_counts == b.truncated_counts)
        });
        let ds = w[1].s - w[0].s;
        let equal = ((w[2].s - w[1].s) - ds).abs() <= 1e-12 * ds.max(1.0);
        // a pinned point may sit on either side of its kink within rounding
        let smooth = w.iter().all(|x| x.pinned == 0);
        if !same_pattern || !smooth || !equal || ds < 1e-4 {
            continue;
        }
        let differenced = (w[2].cost - w[0].cost) / (2.0 * ds);
        let exact = (w[0].cost_rate + 4.0 * w[1].cost_rate + w[2].cost_rate) / 6.0;
        if differenced.abs() > 1e-8 && exact.abs() > 1e-8 {
            assert!(
                (differenced - exact).abs() <= 1e-4 * exact.abs(),
                "cost rate {differenced} vs {exact} at s = {}",
                w[0].s
            );
            checked += 1;
        }
    }
    checked
}

#[test]
fn cost_rate_matches_field_norm() {
    let mut rng = scenario::rng(31);
    let opts = IntegratorOptions { initial_step: 1e-3, max_step: 1e-3, ..IntegratorOptions::default() };
    let mut checked = 0;
    for k in 0..6 {
        let (state, data) = random_separated(&mut rng, 2 + k % 3, 6).unwrap();
        checked += check_descent_identity(&integrate_effective(&state, &data, 1.5, &opts).unwrap());
        checked += check_descent_identity(&integrate_general(&state, &data, 1.5, &opts).unwrap());
    }
    assert!(checked > 100);
}

#[test]
fn directional_derivative_is_trace_pairing() {
    let mut rng = scenario::rng(32);
    let fd = FDSettings::default();
    for k in 0..40 {
        let q = 2 + k % 4;
        let (state, data) = random_general(&mut rng, q, 2, q, 6).unwrap();
        let rhs = general_rhs(&state, &data).unwrap();
        for (l, r) in rhs.iter().enumerate() {
            let omega = random_antisymmetric(&mut rng, q, 1.0);
            let numeric = fd_directional_rotation(&state, &data, l, &omega, &fd).unwrap();
            let analytic = (omega.as_matrix() * r.omega.as_matrix()).trace();
            assert!((numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "{numeric} vs {analytic}");
        }
    }
}

/// Points placed directly in pre-activation space with every coordinate at
/// least 0.5 away from zero, so large difference steps stay kink-free.
fn smooth_single_layer(seed: u64) -> (ModelState, TrainingSet) {
    let mut rng = scenario::rng(seed);
    let layer = LayerParams::new(scenario::random_orthogonal(&mut rng, 3), scenario::gaussian_vec(&mut rng, 3, 1.0)).unwrap();
    let signs = [[1.0, -1.0, 1.0], [-1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [-1.0, -1.0, 1.0], [1.0, -1.0, -1.0]];
    let cluster = signs
        .iter()
        .map(|sg| {
            let z: Vec<f64> = sg.iter().zip(scenario::gaussian_vec(&mut rng, 3, 0.4)).map(|(s, g)| s * (0.5 + g.abs().min(1.5))).collect();
            layer.pull(&z)
        })
        .collect();
    let label = scenario::gaussian_vec(&mut rng, 3, 2.0);
    let state = ModelState::new(vec![layer], Matrix::identity(3), vec![label]).unwrap();
    (state, TrainingSet::new(vec![cluster]).unwrap())
}

#[test]
fn finite_differences_converge_at_second_order() {
    for seed in 0..10 {
        let (state, data) = smooth_single_layer(seed);
        let analytic = effective_rhs(&state, &data, 0).unwrap();
        let err = |h: f64| {
            let g = fd_grad_rotation(&state, &data, 0, &FDSettings::new(h).unwrap()).unwrap();
            (g.as_matrix() - analytic.omega.as_matrix()).frobenius_norm()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.5..=4.5).contains(&ratio), "seed {seed}: error ratio {ratio}");
    }
}

#[test]
fn near_kink_is_refused() {
    let state = ModelState::new(vec![LayerParams::identity(2)], Matrix::identity(2), vec![vec![1.0, 1.0]]).unwrap();
    let data = TrainingSet::new(vec![vec![vec![1e-7, 2.0]]]).unwrap();
    assert!(matches!(fd_grad_beta(&state, &data, 0, &FDSettings::default()), Err(Error::NearKink { .. })));
}

#[test]
fn general_and_effective_trajectories_agree_under_separation() {
    let mut rng = scenario::rng(34);
    let opts = IntegratorOptions::default();
    let mut compared = 0;
    for k in 0..60 {
        if compared == 6 {
            break;
        }
        let (state, data) = random_separated(&mut rng, 2 + k % 3, 6).unwrap();
        let eff = integrate_effective(&state, &data, 0.25, &opts).unwrap();
        if !eff.samples.iter().all(|s| chain_separated(&s.state, &data, 0.0)) {
            continue;
        }
        let gen = integrate_general(&state, &data, 0.25, &opts).unwrap();
        assert!(state_distance(&eff.last().state, &gen.last().state) <= 1e-6);
        compared += 1;
    }
    assert!(compared >= 6, "only {compared} configurations stayed separated");
}

#[test]
fn adaptive_matches_reference_between_events() {
    let mut rng = scenario::rng(35);
    let opts = IntegratorOptions::default();
    let mut compared = 0;
    for k in 0..60 {
        if compared == 3 {
            break;
        }
        let q = 2 + k % 3;
        let (state, data) = random_general(&mut rng, q, 2, q, 6).unwrap();
        let traj = integrate_general(&state, &data, 0.1, &opts).unwrap();
        if !traj.events.is_empty() {
            continue;
        }
        let reference = reference_integrate(|s: &ModelState| general_rhs(s, &data), &state, 0.1, REFERENCE_STEP).unwrap();
        assert!(state_distance(&traj.last().state, &reference) <= 1e-6);
        compared += 1;
    }
    assert!(compared >= 3, "only {compared} event-free runs");
}

#[test]
fn single_cluster_decays_at_unit_rate() {
    let data = TrainingSet::new(vec![vec![vec![-1.0], vec![-2.5]]]).unwrap();
    let layer = LayerParams::new(OrthogonalMatrix::identity(1), vec![0.0]).unwrap();
    let state = ModelState::new(vec![layer], Matrix::identity(1), vec![vec![3.0]]).unwrap();
    let traj = integrate_effective(&state, &data, 4.0, &IntegratorOptions::default()).unwrap();
    for s in &traj.samples {
        let expected = 3.0 * (-s.s).exp();
        assert!((s.per_layer[0].beta_gap - expected).abs() <= 1e-7 * expected.max(1e-3));
    }
    let reference = reference_integrate(|s: &ModelState| Ok(vec![effective_rhs(s, &data, 0)?]), &state, 4.0, REFERENCE_STEP).unwrap();
    assert!(state_distance(&traj.last().state, &reference) <= 1e-8);
}

#[test]
fn event_times_follow_the_closed_form_ladder() {
    let points = [0.5, 1.5, 2.0, 3.0];
    let (y, b0) = (6.0, 0.5);
    let exact = one_dim_flow(&points, y, b0).unwrap();
    let layer = LayerParams::new(OrthogonalMatrix::identity(1), vec![-b0]).unwrap();
    let state = ModelState::new(vec![layer], Matrix::identity(1), vec![vec![y]]).unwrap();
    let data = TrainingSet::new(vec![points.iter().map(|&x| vec![x]).collect()]).unwrap();
    let traj = integrate_effective(&state, &data, 8.0, &IntegratorOptions::default()).unwrap();
    let times: Vec<f64> = traj.events.iter().map(|e| e.s).collect();
    assert_eq!(times.len(), exact.crossings.len());
    for (a, b) in times.iter().zip(&exact.crossings) {
        assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
    }
    for s in &traj.samples {
        assert!((s.per_layer[0].beta_gap - exact.gap(s.s)).abs() <= 1e-7);
    }
}

#[test]
fn overlapping_clusters_still_descend() {
    let data = TrainingSet::new(vec![
        vec![vec![0.0, 0.3], vec![0.4, -0.2], vec![-0.3, 0.1]],
        vec![vec![0.1, 0.0], vec![-0.2, 0.4], vec![0.3, 0.3]],
    ])
    .unwrap();
    let layers = vec![
        LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, 0.4), vec![0.05, -0.1]).unwrap(),
        LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, -0.7), vec![0.2, 0.1]).unwrap(),
    ];
    let state = ModelState::new(layers, Matrix::identity(2), vec![vec![1.0, -1.0], vec![-0.5, 0.5]]).unwrap();
    for traj in [
        integrate_general(&state, &data, 3.0, &IntegratorOptions::default()).unwrap(),
        integrate_effective(&state, &data, 3.0, &IntegratorOptions::default()).unwrap(),
    ] {
        for w in traj.samples.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-8 * (1.0 + w[0].cost));
        }
        assert!(traj.last().cost < traj.samples[0].cost);
    }
}

#[test]
fn boundary_sliding_neither_stalls_nor_ascends() {
    let mut rng = scenario::rng(35);
    let mut slid = 0;
    for k in 0..16 {
        let q = 2 + k % 3;
        let (state, data) = random_general(&mut rng, q, 2, q, 6).unwrap();
        let traj = integrate_general(&state, &data, 1.0, &IntegratorOptions::default()).unwrap();
        assert_eq!(traj.last().s, 1.0);
        for w in traj.samples.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-8 * (1.0 + w[0].cost));
        }
        for s in &traj.samples {
            assert!(s.cost_rate <= 1e-9 * (1.0 + s.cost), "cost rate {} at s = {}", s.cost_rate, s.s);
        }
        assert!(traj.events.len() < 200, "{} events", traj.events.len());
        if traj.samples.iter().any(|s| s.pinned > 0) {
            slid += 1;
        }
    }
    assert!(slid >= 6, "only {slid} runs slid");
}

#[test]
fn collapsed_field_is_the_negative_gradient() {
    let mut rng = scenario::rng(36);
    let fd = FDSettings::default();
    for q in 1..6 {
        let cs = CollapsedState::new(
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
        )
        .unwrap();
        let (db, dw) = collapsed_rhs(&cs);
        let (gb, gw) = fd_grad_collapsed(&cs, &fd);
        assert!((&db + &gb).frobenius_norm() <= 1e-7 * gb.frobenius_norm().max(1.0));
        assert!((&dw + &gw).frobenius_norm() <= 1e-7 * gw.frobenius_norm().max(1.0));
    }
}

#[test]
fn collapsed_invariant_is_conserved() {
    let mut rng = scenario::rng(37);
    for q in [2, 3, 5] {
        let cs = CollapsedState::new(
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
            scenario::gaussian_matrix(&mut rng, q, q, 1.0),
        )
        .unwrap();
        let traj = integrate_collapsed(&cs, 4.0, &IntegratorOptions::default()).unwrap();
        assert!(traj.relative_drift() <= 1e-6 * 4.0);
        let inv = conserved_quantity(&traj.last().state);
        assert!((&inv - &inv.transpose()).max_abs() <= 1e-12 * inv.max_abs().max(1.0));
    }
}

#[test]
fn field_vanishes_when_every_point_is_kept() {
    let data = TrainingSet::new(vec![vec![vec![1.0, 2.0]], vec![vec![2.0, 1.0]]]).unwrap();
    let layers = scenario::all_positive_layers(&data, 2, 0.5);
    let state = ModelState::new(layers, Matrix::identity(2), vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let zero = |r: &[LayerRhs]| r.iter().all(|x| x.squared_norm() == 0.0);
    assert!(zero(&general_rhs(&state, &data).unwrap()));
    assert!(zero(&[effective_rhs(&state, &data, 0).unwrap(), effective_rhs(&state, &data, 1).unwrap()]));
}

//! Seeded generators for initial states, training sets and the test
//! configurations the verification suites run on.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{decomp, expm_antisym, polar_decompose, AntisymmetricMatrix, Matrix, OrthogonalMatrix};
use crate::measures::TrainingSet;
use crate::model::{heaviside_mask, LayerParams, ModelState};
use crate::vector;
use num_traits::Float;

pub type ScenarioRng = ChaCha8Rng;

pub fn rng(seed: u64) -> ScenarioRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            sd * v
        })
        .collect()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        sd * v
    })
}

/// Haar-distributed element of `O(Q)`: the polar factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, q: usize) -> OrthogonalMatrix {
    loop {
        if let Ok((_, r)) = polar_decompose(&gaussian_matrix(rng, q, q, 1.0)) {
            return r;
        }
    }
}

pub fn random_antisymmetric<R: Rng + ?Sized>(rng: &mut R, q: usize, sd: f64) -> AntisymmetricMatrix {
    AntisymmetricMatrix::from_upper(q, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        sd * v
    })
}

/// `𝟙 + 0.3·G` for Gaussian `G`, resampled until `σ_min/σ_max > 0.2`.
pub fn random_well_conditioned<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Matrix {
    loop {
        let m = &Matrix::identity(q) + &gaussian_matrix(rng, q, q, 0.3);
        if let Ok(svd) = decomp::svd(&m) {
            if svd.singular_values[q - 1] > 0.2 * svd.singular_values[0] {
                return m;
            }
        }
    }
}

/// Smallest `|z_r| / max(1, ‖z‖)` over all pre-activations of all points
/// along the whole chain.
pub fn kink_margin(state: &ModelState, data: &TrainingSet) -> f64 {
    let mut margin = f64::INFINITY;
    for cluster in data.clusters() {
        for x in cluster {
            let mut t = x.clone();
            for layer in state.layers() {
                let z = layer.push(&t);
                let scale = vector::norm(&z).max(1.0);
                for v in &z {
                    margin = margin.min(v.abs() / scale);
                }
                t = layer.pull(&vector::relu(&z));
            }
        }
    }
    margin
}

/// Along the full chain, every point is truncated only by the layer sharing
/// its cluster's index, and every foreign pre-activation exceeds `margin`.
pub fn chain_separated(state: &ModelState, data: &TrainingSet, margin: f64) -> bool {
    data.clusters().iter().enumerate().all(|(c, cluster)| {
        cluster.iter().all(|x| {
            let mut t = x.clone();
            state.layers().iter().enumerate().all(|(k, layer)| {
                let z = layer.push(&t);
                let ok = k == c || z.iter().all(|&v| v > margin);
                t = layer.pull(&vector::relu(&z));
                ok
            })
        })
    })
}

fn count_mixed(state: &ModelState, data: &TrainingSet) -> usize {
    let mut mixed = 0;
    for cluster in data.clusters() {
        for x in cluster {
            let mut t = x.clone();
            for layer in state.layers() {
                let z = layer.push(&t);
                if heaviside_mask(&z).is_mixed() {
                    mixed += 1;
                }
                t = layer.pull(&vector::relu(&z));
            }
        }
    }
    mixed
}

/// Random labels and output map for `count` clusters.
fn random_outputs<R: Rng + ?Sized>(rng: &mut R, q: usize, count: usize) -> (Matrix, Vec<Vec<f64>>) {
    let w = random_well_conditioned(rng, q);
    let labels = (0..count).map(|_| gaussian_vec(rng, q, 2.0)).collect();
    (w, labels)
}

fn random_clusters<R: Rng + ?Sized>(rng: &mut R, q: usize, count: usize, max_points: usize, spread: f64, sep: f64) -> Vec<Vec<Vec<f64>>> {
    (0..count)
        .map(|_| {
            let center = gaussian_vec(rng, q, sep);
            let n = rng.random_range(2..=max_points.max(2));
            (0..n).map(|_| vector::add(&center, &gaussian_vec(rng, q, spread))).collect()
        })
        .collect()
}

/// Minimum kink margin accepted by the random generators.
pub const GENERATOR_KINK_MARGIN: f64 = 1e-2;

/// `Q` clusters and `Q` layers such that each layer truncates part of its
/// own cluster (at least one point in an off-diagonal sector somewhere) and
/// leaves every other cluster strictly positive along the chain.
pub fn random_separated<R: Rng + ?Sized>(rng: &mut R, q: usize, max_points: usize) -> Result<(ModelState, TrainingSet)> {
    const MARGIN: f64 = 0.25;
    for _ in 0..2000 {
        let clusters = random_clusters(rng, q, q, max_points, 0.5, 3.0);
        let mut layers = Vec::with_capacity(q);
        for l in 0..q {
            let r = random_orthogonal(rng, q);
            let own: Vec<Vec<f64>> = clusters[l].iter().map(|x| r.apply(x)).collect();
            let others: Vec<Vec<f64>> =
                clusters.iter().enumerate().filter(|(c, _)| *c != l).flat_map(|(_, c)| c.iter().map(|x| r.apply(x))).collect();
            let mut b = vec![0.0; q];
            for (i, bi) in b.iter_mut().enumerate() {
                let floor = others.iter().map(|z| z[i]).fold(f64::INFINITY, f64::min) - MARGIN;
                let lo = own.iter().map(|z| z[i]).fold(f64::INFINITY, f64::min);
                let hi = own.iter().map(|z| z[i]).fold(f64::NEG_INFINITY, f64::max).min(floor);
                // truncate coordinate i below the cut t, i.e. b_i = −t
                let t = if hi > lo && rng.random_bool(0.7) { rng.random_range(lo..hi) } else { lo.min(floor) - 1.0 };
                *bi = -t;
            }
            layers.push(LayerParams::new(r.clone(), r.apply_transpose(&b))?);
        }
        let data = TrainingSet::new(clusters)?;
        let (w, labels) = random_outputs(rng, q, q);
        let state = ModelState::new(layers, w, labels)?;
        if chain_separated(&state, &data, MARGIN)
            && count_mixed(&state, &data) > 0
            && kink_margin(&state, &data) > GENERATOR_KINK_MARGIN
        {
            return Ok((state, data));
        }
    }
    Err(Error::InvalidArgument(alloc::format!("no separated configuration found for Q = {q}")))
}

/// Overlapping clusters and `layers` layers with random rotations and biases
/// of the data's scale, so that many points cross several layers' sector
/// boundaries.
pub fn random_general<R: Rng + ?Sized>(rng: &mut R, q: usize, layers: usize, clusters: usize, max_points: usize) -> Result<(ModelState, TrainingSet)> {
    for _ in 0..2000 {
        let data = TrainingSet::new(random_clusters(rng, q, clusters, max_points, 1.0, 1.0))?;
        let params = (0..layers)
            .map(|_| LayerParams::new(random_orthogonal(rng, q), gaussian_vec(rng, q, 0.7)))
            .collect::<Result<Vec<_>>>()?;
        let (w, labels) = random_outputs(rng, q, clusters);
        let state = ModelState::new(params, w, labels)?;
        if count_mixed(&state, &data) > 0 && kink_margin(&state, &data) > GENERATOR_KINK_MARGIN {
            return Ok((state, data));
        }
    }
    Err(Error::InvalidArgument(alloc::format!("no kink-free configuration found for Q = {q}")))
}

/// Identity rotations and zero biases.
pub fn identity_layers(q: usize, count: usize) -> Vec<LayerParams> {
    (0..count).map(|_| LayerParams::identity(q)).collect()
}

/// Random rotations and zero biases.
pub fn random_orthogonal_layers<R: Rng + ?Sized>(rng: &mut R, q: usize, count: usize) -> Vec<LayerParams> {
    (0..count)
        .map(|_| LayerParams::new(random_orthogonal(rng, q), vec![0.0; q]).expect("square"))
        .collect()
}

/// Identity rotations with biases that put every point of every cluster
/// strictly inside every layer's positive sector.
pub fn all_positive_layers(data: &TrainingSet, count: usize, margin: f64) -> Vec<LayerParams> {
    let q = data.dim();
    let beta: Vec<f64> = (0..q)
        .map(|r| -data.clusters().iter().flatten().map(|x| x[r]).fold(f64::INFINITY, f64::min) + margin)
        .collect();
    (0..count)
        .map(|_| LayerParams::new(OrthogonalMatrix::identity(q), beta.clone()).expect("square"))
        .collect()
}

/// Identity rotations with layer `ℓ`'s bias putting cluster `ℓ` entirely in
/// its negative sector. Layers without a cluster of the same index are
/// all-positive.
pub fn fully_truncated_layers(data: &TrainingSet, count: usize, margin: f64) -> Vec<LayerParams> {
    let q = data.dim();
    let positive = all_positive_layers(data, 1, margin).remove(0);
    (0..count)
        .map(|l| {
            if l >= data.num_clusters() {
                return positive.clone();
            }
            let beta = (0..q)
                .map(|r| -data.cluster(l).iter().map(|x| x[r]).fold(f64::NEG_INFINITY, f64::max) - margin)
                .collect();
            LayerParams::new(OrthogonalMatrix::identity(q), beta).expect("square")
        })
        .collect()
}

/// Constants of the finite-time collapse hypotheses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseConstants {
    /// Bound on the mass outside the negative orthant in each coordinate.
    pub eta0: f64,
    /// Bound on the first moment in off-diagonal sectors.
    pub eta1: f64,
    /// Fraction of the initial gap below which all mass is truncated.
    pub gamma: f64,
}

impl CollapseConstants {
    /// `1.1 |β(0) + ỹ| η₁`
    pub fn eta1_prime(&self, gap0: f64) -> f64 {
        1.1 * gap0 * self.eta1
    }

    /// Radius of the rotation neighbourhood. Two slightly different
    /// expressions for it can be read off the collapse argument; the larger
    /// one is used, which makes the hypotheses harder to satisfy.
    pub fn eta2(&self, gap0: f64) -> f64 {
        let e1p = self.eta1_prime(gap0);
        let log = (1.0 / self.gamma).ln();
        let a = self.eta1 / (1.0 - self.eta0 - e1p) * log;
        let b = e1p / (1.0 - self.eta0 - self.eta1) * log;
        a.max(b)
    }

    /// Upper bound on the collapse time.
    pub fn s1_bound(&self, gap0: f64) -> f64 {
        (1.0 / self.gamma).ln() / (1.0 - self.eta0 - self.eta1_prime(gap0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseScenario {
    pub state: ModelState,
    pub data: TrainingSet,
    /// The layer whose cluster collapses.
    pub layer: usize,
    pub constants: CollapseConstants,
}

/// A two-dimensional, two-cluster configuration in which layer 0 collapses
/// its cluster in finite time: nineteen points sit deep in the negative
/// orthant and one straggler sits in an off-diagonal sector close to the
/// origin. Cluster 1 is untouched by both layers.
pub fn collapse_scenario(seed: u64) -> CollapseScenario {
    let mut rng = rng(seed);
    let r0 = OrthogonalMatrix::givens(2, 0, 1, 0.3);
    let y0 = vec![1.0, 2.0];
    let u0 = [0.5, 0.0];
    // positions R₀(x − ỹ) of cluster 0, i.e. the pre-activations once β = −ỹ
    let mut w: Vec<Vec<f64>> = (0..19)
        .map(|_| vec![-3.0 + rng.random_range(-0.1..0.1), -3.0 + rng.random_range(-0.1..0.1)])
        .collect();
    w.push(vec![-0.3, -0.3]);
    let cluster0: Vec<Vec<f64>> = w.iter().map(|p| vector::add(&r0.apply_transpose(p), &y0)).collect();
    let cluster1: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let p = [5.0 + rng.random_range(-0.2..0.2), 5.0 + rng.random_range(-0.2..0.2)];
            vector::add(&r0.apply_transpose(&p), &y0)
        })
        .collect();
    let beta0 = vector::sub(&r0.apply_transpose(&u0), &y0);
    let layers = vec![
        LayerParams::new(r0, beta0).expect("square"),
        LayerParams::new(OrthogonalMatrix::identity(2), vec![10.0, 10.0]).expect("square"),
    ];
    let state = ModelState::new(layers, Matrix::identity(2), vec![y0, vec![-1.0, 1.0]]).expect("well-posed");
    let data = TrainingSet::new(vec![cluster0, cluster1]).expect("nonempty");
    CollapseScenario { state, data, layer: 0, constants: CollapseConstants { eta0: 0.06, eta1: 0.08, gamma: 0.09 } }
}

/// Worst values of the three collapse hypotheses found by sampling the
/// neighbourhood of the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    /// Smallest per-coordinate truncated fraction; must exceed `1 − η₀`.
    pub min_truncated_mass: f64,
    /// Largest `(1/N) Σ |z|` over points in off-diagonal sectors; must stay below `η₁`.
    pub max_offdiag_moment: f64,
    /// Every sample with `|β + ỹ| < γ |β(0) + ỹ|` had all mass in the closed negative orthant.
    pub collapses_near_label: bool,
    pub eta2: f64,
    pub samples: usize,
}

impl HypothesisReport {
    pub fn holds(&self, c: &CollapseConstants) -> bool {
        self.min_truncated_mass > 1.0 - c.eta0 && self.max_offdiag_moment < c.eta1 && self.collapses_near_label
    }
}

fn unit_ball_sample<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Vec<f64> {
    let g = gaussian_vec(rng, q, 1.0);
    let n = vector::norm(&g).max(f64::MIN_POSITIVE);
    let radius = rng.random::<f64>().powf(1.0 / q as f64);
    vector::scale(&g, radius / n)
}

/// Samples `(β, R)` with `|β + ỹ| ≤ 1.1 |β(0) + ỹ|` and `‖R − R(0)‖ < η₂`
/// (rotations `exp(ω)R(0)` with `‖ω‖_F < η₂`), plus boundary points of both
/// neighbourhoods, and records the worst hypothesis values.
pub fn check_collapse_hypotheses(scenario: &CollapseScenario, samples: usize, seed: u64) -> HypothesisReport {
    let mut rng = rng(seed);
    let l = scenario.layer;
    let layer = scenario.state.layer(l);
    let q = layer.dim();
    let target = scenario.state.pulled_label(l);
    let cluster = scenario.data.cluster(l);
    let gap0 = scenario.state.beta_gap(l);
    let c = scenario.constants;
    let eta2 = c.eta2(gap0);
    let n = cluster.len() as f64;

    let mut report = HypothesisReport {
        min_truncated_mass: f64::INFINITY,
        max_offdiag_moment: 0.0,
        collapses_near_label: true,
        eta2,
        samples: 0,
    };
    let mut visit = |offset: Vec<f64>, omega: AntisymmetricMatrix, inner: bool| {
        let r = expm_antisym(&omega).compose(layer.rotation());
        let beta = vector::sub(&offset, target);
        let params = LayerParams::new(r, beta).expect("square");
        let zs: Vec<Vec<f64>> = cluster.iter().map(|x| params.push(x)).collect();
        report.samples += 1;
        if inner {
            if zs.iter().any(|z| z.iter().any(|&v| v > 0.0)) {
                report.collapses_near_label = false;
            }
            return;
        }
        for i in 0..q {
            let frac = zs.iter().filter(|z| z[i] <= 0.0).count() as f64 / n;
            report.min_truncated_mass = report.min_truncated_mass.min(frac);
        }
        let moment: f64 =
            zs.iter().filter(|z| heaviside_mask(z).is_mixed()).map(|z| vector::norm(z)).sum::<f64>() / n;
        report.max_offdiag_moment = report.max_offdiag_moment.max(moment);
    };

    let scaled_omega = |rng: &mut ScenarioRng, radius: f64| {
        let w = random_antisymmetric(rng, q, 1.0);
        let norm = w.norm().max(f64::MIN_POSITIVE);
        w.scale(radius / norm)
    };
    for k in 0..samples {
        let boundary = k % 4 == 0;
        let dir = unit_ball_sample(&mut rng, q);
        let dir = if boundary { vector::scale(&dir, 1.0 / vector::norm(&dir).max(f64::MIN_POSITIVE)) } else { dir };
        let radius = if boundary { 0.999 * eta2 } else { eta2 * rng.random::<f64>() };
        let omega = scaled_omega(&mut rng, radius);
        visit(vector::scale(&dir, 1.1 * gap0), omega.clone(), false);
        let inner_dir = unit_ball_sample(&mut rng, q);
        visit(vector::scale(&inner_dir, 0.999 * c.gamma * gap0), omega, true);
    }
    report
}

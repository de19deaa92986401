//! Adaptive integration of the piecewise-smooth bias/rotation flows.
//!
//! Between sector crossings the field is smooth, so each step integrates the
//! field with every point's sector pattern frozen at the start of the step.
//! The rotation part uses a fourth-order Runge–Kutta–Munthe-Kaas scheme, the
//! bias part plain RK4 on the same stages. The local error is estimated by
//! step doubling. When the pattern at the end of a step differs from the
//! frozen one, the step length is bisected until the first crossing is
//! bracketed to `event_tol`, the step is cut there and the crossing recorded.
//!
//! A coordinate whose one-sided fields both push it back onto the boundary
//! would otherwise chatter across it in steps of `event_tol`. Such a
//! coordinate is pinned: it counts as truncated, and the field becomes the
//! shortest combination of the one-sided fields with weights in `[0, 1]`.
//! That combination keeps the pre-activation at zero while sliding is
//! possible. The pin is released once its weight is held at a bound and the
//! point has left the boundary on that side.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::manifold::{expm_antisym, AntisymmetricMatrix, Matrix};
use crate::measures::{check_cluster_separation, TrainingSet};
use crate::model::{euclidean_cost, heaviside_mask, truncation_map, LayerParams, ModelState, SectorMask};
use crate::vector;

use super::rhs::{chain_masks, effective_rhs_with, general_rhs_with, LayerRhs};

/// Which vector field drives the layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    /// Layer `ℓ` is driven by cluster `ℓ` alone.
    Effective,
    /// Every layer sees every cluster through the full chain.
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub atol: f64,
    pub rtol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Steps below this abort with [`Error::StepUnderflow`].
    pub min_step: f64,
    /// Width of the bracket around a sector crossing.
    pub event_tol: f64,
    /// A step may raise the cost by at most `monotonicity_tol · (1 + cost)`.
    pub monotonicity_tol: f64,
    /// Rotations are snapped back onto `O(Q)` after this many accepted steps.
    pub reproject_every: usize,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            atol: 1e-9,
            rtol: 1e-7,
            initial_step: 1e-2,
            max_step: 1e-2,
            min_step: 1e-14,
            event_tol: 1e-9,
            monotonicity_tol: 1e-8,
            reproject_every: 100,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDiagnostics {
    /// `‖Ω_ℓ‖_F`
    pub omega_norm: f64,
    /// `‖β⁽ℓ⁾ + ỹ_ℓ‖`, NaN for a layer without a label of the same index.
    pub beta_gap: f64,
    /// `n_r⁽ℓ⁾`: tracked points truncated in coordinate `r` of layer `ℓ`.
    pub truncated_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub s: f64,
    pub state: ModelState,
    pub cost: f64,
    /// Exact cost rate at this state, `−Σ_ℓ (|β̇_ℓ|² + ‖Ω_ℓ‖_F²)` away from
    /// pinned coordinates.
    pub cost_rate: f64,
    pub per_layer: Vec<LayerDiagnostics>,
    /// Coordinates currently held on their sector boundary.
    pub pinned: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The coordinate went from positive to `≤ 0`.
    Entering,
    /// The coordinate became positive.
    Leaving,
}

/// A point coordinate crossing a layer's sector boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub s: f64,
    pub layer: usize,
    pub cluster: usize,
    pub point: usize,
    pub coordinate: usize,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: FlowKind,
    pub samples: Vec<FlowSample>,
    pub events: Vec<Event>,
    /// Number of times the effective flow found the clusters not separated.
    pub separation_warnings: usize,
}

impl Trajectory {
    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("a trajectory holds at least its initial sample")
    }
}

/// `[cluster][point][slot]`: the sector of each tracked pre-activation. In
/// the effective flow the only slot of cluster `ℓ` is layer `ℓ`; in the
/// general flow slot `k` is layer `k`.
type Pattern = Vec<Vec<Vec<SectorMask>>>;

fn slot_layer(kind: FlowKind, cluster: usize, slot: usize) -> usize {
    match kind {
        FlowKind::Effective => cluster,
        FlowKind::General => slot,
    }
}

fn observe(kind: FlowKind, state: &ModelState, data: &TrainingSet) -> Pattern {
    data.clusters()
        .iter()
        .enumerate()
        .map(|(c, cluster)| {
            cluster
                .iter()
                .map(|x| match kind {
                    FlowKind::Effective if c < state.depth() => {
                        alloc::vec![heaviside_mask(&state.layer(c).push(x))]
                    }
                    FlowKind::Effective => Vec::new(),
                    FlowKind::General => chain_masks(state.layers(), x),
                })
                .collect()
        })
        .collect()
}

fn field(kind: FlowKind, state: &ModelState, data: &TrainingSet, pattern: &Pattern) -> Vec<LayerRhs> {
    match kind {
        FlowKind::Effective => (0..state.depth())
            .map(|l| {
                if l < data.num_clusters() {
                    let masks: Vec<SectorMask> = pattern[l].iter().map(|m| m[0].clone()).collect();
                    effective_rhs_with(state.layer(l), state.pulled_label(l), data.cluster(l), &masks)
                } else {
                    LayerRhs::zeros(state.dim())
                }
            })
            .collect(),
        FlowKind::General => general_rhs_with(state, data, pattern),
    }
}

/// A tracked coordinate held on its sector boundary, nominally truncated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pin {
    cluster: usize,
    point: usize,
    slot: usize,
    coord: usize,
}

impl Pin {
    fn of(kind: FlowKind, ev: &Event) -> Self {
        let slot = match kind {
            FlowKind::Effective => 0,
            FlowKind::General => ev.layer,
        };
        Self { cluster: ev.cluster, point: ev.point, slot, coord: ev.coordinate }
    }

    fn set(&self, pattern: &mut Pattern, positive: bool) {
        pattern[self.cluster][self.point][self.slot].set(self.coord, positive);
    }

    fn with(&self, pattern: &Pattern, positive: bool) -> Pattern {
        let mut p = pattern.clone();
        self.set(&mut p, positive);
        p
    }
}

fn observe_pinned(kind: FlowKind, state: &ModelState, data: &TrainingSet, pins: &[Pin]) -> Pattern {
    let mut p = observe(kind, state, data);
    for pin in pins {
        pin.set(&mut p, false);
    }
    p
}

/// `dz/ds` of the pinned pre-activation when the layers move along `f`,
/// with the pattern of the earlier layers held fixed.
fn pin_rate(kind: FlowKind, state: &ModelState, data: &TrainingSet, pattern: &Pattern, pin: &Pin, f: &[LayerRhs]) -> f64 {
    let target = slot_layer(kind, pin.cluster, pin.slot);
    let first = match kind {
        FlowKind::Effective => target,
        FlowKind::General => 0,
    };
    let mut t = data.cluster(pin.cluster)[pin.point].clone();
    let mut dt = alloc::vec![0.0; state.dim()];
    for k in first..target {
        let (layer, mask, fk) = (state.layer(k), &pattern[pin.cluster][pin.point][k], &f[k]);
        let z = layer.push(&t);
        let dz = vector::add(&fk.omega.as_matrix().mul_vec(&z), &layer.rotation().apply(&vector::add(&dt, &fk.beta_dot)));
        let hz = mask.keep(&z);
        t = layer.pull(&hz);
        // d(Rᵀ) = −RᵀΩ
        dt = layer.rotation().apply_transpose(&vector::sub(&mask.keep(&dz), &fk.omega.as_matrix().mul_vec(&hz)));
        vector::axpy(&mut dt, -1.0, &fk.beta_dot);
    }
    let (layer, fk) = (state.layer(target), &f[target]);
    let z = layer.push(&t);
    let dz = vector::add(&fk.omega.as_matrix().mul_vec(&z), &layer.rotation().apply(&vector::add(&dt, &fk.beta_dot)));
    dz[pin.coord]
}

fn axpy_rhs(acc: &mut [LayerRhs], k: f64, f: &[LayerRhs]) {
    for (a, b) in acc.iter_mut().zip(f) {
        vector::axpy(&mut a.beta_dot, k, &b.beta_dot);
        a.omega = a.omega.add(&b.omega.scale(k));
    }
}

fn inner(a: &[LayerRhs], b: &[LayerRhs]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            vector::dot(&x.beta_dot, &y.beta_dot) + vector::dot(x.omega.as_matrix().as_slice(), y.omega.as_matrix().as_slice())
        })
        .sum()
}

/// Minimizes `|base + Σ a_j d_j|²` over `a ∈ [0, 1]^m` by coordinate
/// descent, given `g_ij = ⟨d_i, d_j⟩` and `c_i = ⟨d_i, base⟩`. Returns the
/// weights and the gradient `c + g a` at them.
fn shortest_combination(g: &Matrix, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = c.len();
    let grad = |a: &[f64], i: usize| c[i] + (0..m).map(|j| g[(i, j)] * a[j]).sum::<f64>();
    let mut a = alloc::vec![0.0; m];
    for _ in 0..1000 {
        let mut change = 0.0f64;
        for i in 0..m {
            if !(g[(i, i)] > 0.0) {
                continue;
            }
            let next = (a[i] - grad(&a, i) / g[(i, i)]).clamp(0.0, 1.0);
            change = change.max((next - a[i]).abs());
            a[i] = next;
        }
        if change <= 1e-15 {
            break;
        }
    }
    let residual = (0..m).map(|i| grad(&a, i)).collect();
    (a, residual)
}

/// The field with every pin truncated, the one-sided corrections, and the
/// weights in `[0, 1]` that make the combined field shortest.
///
/// The cost is continuous across each boundary, so every correction is
/// normal to it. The shortest combination therefore slides along the
/// boundaries whenever sliding is possible, and it descends on every side.
struct Sliding {
    base: Vec<LayerRhs>,
    corrections: Vec<Vec<LayerRhs>>,
    weights: Vec<f64>,
    /// Derivative of the squared length in each weight.
    residual: Vec<f64>,
    /// `|d_j|²`
    sizes: Vec<f64>,
}

impl Sliding {
    fn new(kind: FlowKind, state: &ModelState, data: &TrainingSet, pattern: &Pattern, pins: &[Pin]) -> Self {
        let base = field(kind, state, data, pattern);
        let corrections: Vec<Vec<LayerRhs>> = pins
            .iter()
            .map(|pin| {
                let mut d = field(kind, state, data, &pin.with(pattern, true));
                axpy_rhs(&mut d, -1.0, &base);
                d
            })
            .collect();
        let m = pins.len();
        let g = Matrix::from_fn(m, m, |a, b| inner(&corrections[a], &corrections[b]));
        let c: Vec<f64> = corrections.iter().map(|d| inner(d, &base)).collect();
        let (weights, residual) = shortest_combination(&g, &c);
        let sizes = (0..m).map(|j| g[(j, j)]).collect();
        Self { base, corrections, weights, residual, sizes }
    }

    fn field(&self) -> Vec<LayerRhs> {
        let mut f = self.base.clone();
        for (a, d) in self.weights.iter().zip(&self.corrections) {
            axpy_rhs(&mut f, *a, d);
        }
        f
    }
}

fn pinned_field(kind: FlowKind, state: &ModelState, data: &TrainingSet, pattern: &Pattern, pins: &[Pin]) -> Vec<LayerRhs> {
    if pins.is_empty() {
        field(kind, state, data, pattern)
    } else {
        Sliding::new(kind, state, data, pattern, pins).field()
    }
}

/// Both one-sided fields push the coordinate back onto its boundary.
fn starts_sliding(kind: FlowKind, state: &ModelState, data: &TrainingSet, pattern: &Pattern, pins: &[Pin], pin: &Pin) -> bool {
    let rate = |positive: bool| {
        let p = pin.with(pattern, positive);
        pin_rate(kind, state, data, &p, pin, &pinned_field(kind, state, data, &p, pins))
    };
    rate(false) > 0.0 && rate(true) < 0.0
}

/// Cost whose gradient the effective flow follows: each cluster is truncated
/// only by the layer sharing its index. It equals [`euclidean_cost`]
/// whenever the clusters are separated.
pub fn effective_cost(state: &ModelState, data: &TrainingSet) -> Result<f64> {
    if data.dim() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: data.dim() });
    }
    if data.num_clusters() != state.labels().len() {
        return Err(Error::DimensionMismatch { expected: state.labels().len(), found: data.num_clusters() });
    }
    let mut cost = 0.0;
    for (c, cluster) in data.clusters().iter().enumerate() {
        let target = state.pulled_label(c);
        let mut sum = 0.0;
        for x in cluster {
            let t = if c < state.depth() { truncation_map(state.layer(c), x)? } else { x.clone() };
            let d = vector::sub(&t, target);
            sum += vector::dot(&d, &d);
        }
        cost += 0.5 * sum / cluster.len() as f64;
    }
    Ok(cost)
}

fn cost_of(kind: FlowKind, state: &ModelState, data: &TrainingSet) -> Result<f64> {
    match kind {
        FlowKind::Effective => effective_cost(state, data),
        FlowKind::General => euclidean_cost(state, data),
    }
}

/// `A − [θ, A]/2 + [θ, [θ, A]]/12`, the inverse differential of `exp`
/// truncated at the order RKMK4 needs.
fn dexpinv(theta: &AntisymmetricMatrix, a: &AntisymmetricMatrix) -> AntisymmetricMatrix {
    let c1 = theta.bracket(a);
    let c2 = theta.bracket(&c1);
    a.add(&c1.scale(-0.5)).add(&c2.scale(1.0 / 12.0))
}

fn shifted(base: &ModelState, dbeta: &[Vec<f64>], theta: &[AntisymmetricMatrix]) -> ModelState {
    let layers = base
        .layers()
        .iter()
        .zip(dbeta.iter().zip(theta))
        .map(|(layer, (db, th))| {
            let beta = vector::add(layer.beta(), db);
            let rotation = if th.as_matrix().max_abs() == 0.0 {
                layer.rotation().clone()
            } else {
                expm_antisym(th).compose(layer.rotation())
            };
            LayerParams::new(rotation, beta).expect("dimensions are preserved")
        })
        .collect();
    base.with_layers(layers)
}

fn rkmk4_step(kind: FlowKind, base: &ModelState, data: &TrainingSet, pattern: &Pattern, pins: &[Pin], h: f64) -> ModelState {
    let eval = |st: &ModelState| pinned_field(kind, st, data, pattern, pins);
    let split = |f: Vec<LayerRhs>| -> (Vec<Vec<f64>>, Vec<AntisymmetricMatrix>) {
        f.into_iter().map(|r| (vector::scale(&r.beta_dot, h), r.omega)).unzip()
    };
    let halves = |v: &[Vec<f64>]| -> Vec<Vec<f64>> { v.iter().map(|b| vector::scale(b, 0.5)).collect() };
    let scaled = |v: &[AntisymmetricMatrix], k: f64| -> Vec<AntisymmetricMatrix> { v.iter().map(|t| t.scale(k)).collect() };

    let (kb1, om1) = split(eval(base));
    let th1: Vec<AntisymmetricMatrix> = scaled(&om1, h);

    let a2 = scaled(&th1, 0.5);
    let (kb2, om2) = split(eval(&shifted(base, &halves(&kb1), &a2)));
    let th2: Vec<AntisymmetricMatrix> = a2.iter().zip(&om2).map(|(a, o)| dexpinv(a, o).scale(h)).collect();

    let a3 = scaled(&th2, 0.5);
    let (kb3, om3) = split(eval(&shifted(base, &halves(&kb2), &a3)));
    let th3: Vec<AntisymmetricMatrix> = a3.iter().zip(&om3).map(|(a, o)| dexpinv(a, o).scale(h)).collect();

    let (kb4, om4) = split(eval(&shifted(base, &kb3, &th3)));
    let th4: Vec<AntisymmetricMatrix> = th3.iter().zip(&om4).map(|(a, o)| dexpinv(a, o).scale(h)).collect();

    let dbeta: Vec<Vec<f64>> = (0..base.depth())
        .map(|l| {
            let mut d = vector::scale(&kb1[l], 1.0 / 6.0);
            vector::axpy(&mut d, 1.0 / 3.0, &kb2[l]);
            vector::axpy(&mut d, 1.0 / 3.0, &kb3[l]);
            vector::axpy(&mut d, 1.0 / 6.0, &kb4[l]);
            d
        })
        .collect();
    let theta: Vec<AntisymmetricMatrix> = (0..base.depth())
        .map(|l| {
            th1[l]
                .scale(1.0 / 6.0)
                .add(&th2[l].scale(1.0 / 3.0))
                .add(&th3[l].scale(1.0 / 3.0))
                .add(&th4[l].scale(1.0 / 6.0))
        })
        .collect();
    shifted(base, &dbeta, &theta)
}

/// Scaled maximum difference between two states; at most 1 means the step
/// meets the tolerance.
fn error_norm(a: &ModelState, b: &ModelState, opts: &IntegratorOptions) -> f64 {
    let mut worst: f64 = 0.0;
    let mut check = |x: f64, y: f64| {
        let e = (x - y).abs() / (opts.atol + opts.rtol * x.abs().max(y.abs()));
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    };
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        for (x, y) in la.beta().iter().zip(lb.beta()) {
            check(*x, *y);
        }
        for (x, y) in la.rotation().as_matrix().as_slice().iter().zip(lb.rotation().as_matrix().as_slice()) {
            check(*x, *y);
        }
    }
    worst
}

fn make_sample(kind: FlowKind, s: f64, state: &ModelState, data: &TrainingSet, pattern: &Pattern, pins: &[Pin]) -> Result<FlowSample> {
    let rhs = pinned_field(kind, state, data, pattern, pins);
    let cost = cost_of(kind, state, data)?;
    let cost_rate = if pins.is_empty() {
        -rhs.iter().map(LayerRhs::squared_norm).sum::<f64>()
    } else {
        // the gradient on the side each pinned point actually occupies
        -inner(&field(kind, state, data, &observe(kind, state, data)), &rhs)
    };
    let q = state.dim();
    let mut counts = alloc::vec![alloc::vec![0usize; q]; state.depth()];
    for (c, points) in pattern.iter().enumerate() {
        for masks in points {
            for (slot, mask) in masks.iter().enumerate() {
                let layer = slot_layer(kind, c, slot);
                for r in 0..q {
                    if !mask.get(r) {
                        counts[layer][r] += 1;
                    }
                }
            }
        }
    }
    let per_layer = rhs
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(l, (r, truncated_counts))| LayerDiagnostics {
            omega_norm: r.omega.norm(),
            beta_gap: if l < state.labels().len() { state.beta_gap(l) } else { f64::NAN },
            truncated_counts,
        })
        .collect();
    Ok(FlowSample { s, state: state.clone(), cost, cost_rate, per_layer, pinned: pins.len() })
}

fn crossings(kind: FlowKind, s: f64, old: &Pattern, new: &Pattern, out: &mut Vec<Event>) {
    for (c, (po, pn)) in old.iter().zip(new).enumerate() {
        for (i, (mo, mn)) in po.iter().zip(pn).enumerate() {
            for (slot, (a, b)) in mo.iter().zip(mn).enumerate() {
                for r in 0..a.len() {
                    if a.get(r) != b.get(r) {
                        out.push(Event {
                            s,
                            layer: slot_layer(kind, c, slot),
                            cluster: c,
                            point: i,
                            coordinate: r,
                            direction: if a.get(r) { Direction::Entering } else { Direction::Leaving },
                        });
                    }
                }
            }
        }
    }
}

fn warn_if_not_separated(state: &ModelState, data: &TrainingSet, s: f64, warnings: &mut usize) {
    let report = check_cluster_separation(state, data);
    if !report.is_separated() {
        // logged once per trajectory, counted every time
        if *warnings == 0 {
            log::warn!(
                "clusters are not separated at s = {s}: {} foreign points are truncated, the effective flow ignores them",
                report.violations.len()
            );
        }
        *warnings += 1;
    }
}

/// Drops the pins that no longer slide.
fn release_pins(
    kind: FlowKind,
    s: f64,
    state: &ModelState,
    data: &TrainingSet,
    pattern: &mut Pattern,
    pins: &mut Vec<Pin>,
    events: &mut Vec<Event>,
) {
    let sliding = Sliding::new(kind, state, data, pattern, pins);
    let actual = observe(kind, state, data);
    let reference = 1e-20 * (1.0 + inner(&sliding.base, &sliding.base));
    let mut keep = Vec::with_capacity(pins.len());
    for (j, pin) in pins.iter().enumerate() {
        let positive_now = actual[pin.cluster][pin.point][pin.slot].get(pin.coord);
        let (a, r, size) = (sliding.weights[j], sliding.residual[j], sliding.sizes[j]);
        // a weight held at a bound, pushing outward, lets go once the point
        // is on the side it selects; a pin that changes nothing always does
        let released = if size <= reference {
            true
        } else if a <= 0.0 && r > 1e-9 * size {
            !positive_now
        } else if a >= 1.0 && r < -1e-9 * size {
            positive_now
        } else {
            false
        };
        if !released {
            keep.push(*pin);
            continue;
        }
        if positive_now {
            pin.set(pattern, true);
            events.push(Event {
                s,
                layer: slot_layer(kind, pin.cluster, pin.slot),
                cluster: pin.cluster,
                point: pin.point,
                coordinate: pin.coord,
                direction: Direction::Leaving,
            });
        }
    }
    *pins = keep;
}

fn validate(state: &ModelState, data: &TrainingSet, s_end: f64) -> Result<()> {
    if !(s_end > 0.0) || !s_end.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("s_end must be positive and finite, got {s_end}")));
    }
    if data.dim() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: data.dim() });
    }
    if data.num_clusters() != state.labels().len() {
        return Err(Error::DimensionMismatch { expected: state.labels().len(), found: data.num_clusters() });
    }
    Ok(())
}

/// Integrates the chosen flow on `[0, s_end]`, recording a sample after
/// every accepted step and an event at every sector crossing.
pub fn integrate(
    kind: FlowKind,
    state0: &ModelState,
    data: &TrainingSet,
    s_end: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    validate(state0, data, s_end)?;
    let mut state = state0.clone();
    let mut pattern = observe(kind, &state, data);
    let mut pins: Vec<Pin> = Vec::new();
    let mut separation_warnings = 0;
    if kind == FlowKind::Effective {
        warn_if_not_separated(&state, data, 0.0, &mut separation_warnings);
    }
    let mut samples = alloc::vec![make_sample(kind, 0.0, &state, data, &pattern, &pins)?];
    let mut events = Vec::new();
    let mut cost = samples[0].cost;
    let mut s = 0.0;
    let mut h = opts.initial_step.min(opts.max_step);
    let mut accepted = 0usize;
    let mut attempts = 0usize;

    while s_end - s > opts.min_step {
        attempts += 1;
        if attempts > opts.max_steps {
            return Err(Error::StepUnderflow { s, step: h });
        }
        let remaining = s_end - s;
        let h_try = h.min(remaining);
        if h_try < opts.min_step {
            return Err(Error::StepUnderflow { s, step: h_try });
        }

        let big = rkmk4_step(kind, &state, data, &pattern, &pins, h_try);
        let mid = rkmk4_step(kind, &state, data, &pattern, &pins, 0.5 * h_try);
        let small = rkmk4_step(kind, &mid, data, &pattern, &pins, 0.5 * h_try);
        let err = error_norm(&big, &small, opts);
        if !(err <= 1.0) {
            h = 0.5 * h_try;
            continue;
        }

        let mut next = small;
        let mut taken = h_try;
        let mut next_pattern = observe_pinned(kind, &next, data, &pins);
        if next_pattern != pattern {
            let (mut lo, mut hi) = (0.0, h_try);
            let mut hi_state = big;
            let mut hi_pattern = observe_pinned(kind, &hi_state, data, &pins);
            if hi_pattern == pattern {
                // the single and the double step disagree about the crossing
                hi_state = next.clone();
                hi_pattern = next_pattern.clone();
            }
            while hi - lo > opts.event_tol {
                let m = 0.5 * (lo + hi);
                let trial = rkmk4_step(kind, &state, data, &pattern, &pins, m);
                let trial_pattern = observe_pinned(kind, &trial, data, &pins);
                if trial_pattern == pattern {
                    lo = m;
                } else {
                    hi = m;
                    hi_state = trial;
                    hi_pattern = trial_pattern;
                }
            }
            next = hi_state;
            next_pattern = hi_pattern;
            taken = hi;
        }

        let next_cost = cost_of(kind, &next, data)?;
        if next_cost > cost + opts.monotonicity_tol * (1.0 + cost) {
            h = 0.5 * h_try;
            continue;
        }

        s = if taken == remaining { s_end } else { s + taken };
        let crossed = next_pattern != pattern;
        if crossed {
            let mut changes = Vec::new();
            crossings(kind, s, &pattern, &next_pattern, &mut changes);
            // a crossing right at the start of a step means the coordinate
            // was pushed straight back across the boundary it just crossed
            let chattering = taken <= 4.0 * opts.event_tol;
            for ev in changes {
                let pin = Pin::of(kind, &ev);
                if chattering || starts_sliding(kind, &next, data, &next_pattern, &pins, &pin) {
                    pin.set(&mut next_pattern, false);
                    pins.push(pin);
                    if ev.direction == Direction::Leaving {
                        // nominally still truncated
                        continue;
                    }
                }
                events.push(ev);
            }
        }
        state = next;
        pattern = next_pattern;
        cost = next_cost;
        if !pins.is_empty() {
            release_pins(kind, s, &state, data, &mut pattern, &mut pins, &mut events);
        }
        accepted += 1;
        if opts.reproject_every > 0 && accepted % opts.reproject_every == 0 {
            let layers = state
                .layers()
                .iter()
                .map(|l| LayerParams::new(l.rotation().reproject(), l.beta().to_vec()).expect("same dimension"))
                .collect();
            state = state.with_layers(layers);
        }
        if crossed && kind == FlowKind::Effective {
            warn_if_not_separated(&state, data, s, &mut separation_warnings);
        }
        samples.push(make_sample(kind, s, &state, data, &pattern, &pins)?);
        if err < 1.0 / 32.0 && !crossed {
            h = (2.0 * h_try).min(opts.max_step);
        } else {
            h = h_try;
        }
    }
    Ok(Trajectory { kind, samples, events, separation_warnings })
}

/// Integrates the flow in which layer `ℓ` is driven by cluster `ℓ` alone.
pub fn integrate_effective(state0: &ModelState, data: &TrainingSet, s_end: f64, opts: &IntegratorOptions) -> Result<Trajectory> {
    integrate(FlowKind::Effective, state0, data, s_end, opts)
}

/// Integrates the flow of the full cost with no separation assumption.
pub fn integrate_general(state0: &ModelState, data: &TrainingSet, s_end: f64, opts: &IntegratorOptions) -> Result<Trajectory> {
    integrate(FlowKind::General, state0, data, s_end, opts)
}

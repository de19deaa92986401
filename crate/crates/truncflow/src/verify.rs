//! `truncflow verify`: seeded property suites with a pass/fail line per
//! property and its worst discrepancy.
//!
//! Every case draws from its own generator seeded by `(seed, property,
//! case)`, so a report does not depend on how many threads ran it.

use rayon::prelude::*;
use serde::Serialize;
use truncflow_core::flows::{
    chained_projectors, clustered_explicit, clustered_rhs, collapsed_rhs, effective_rhs, general_rhs,
    integrate_collapsed, integrate_effective, integrate_general, moment_form_rhs, one_dim_flow, CollapsedState,
    IntegratorOptions, LayerRhs, Trajectory,
};
use truncflow_core::fit::log_slope;
use truncflow_core::model::chained_truncation;
use truncflow_core::oracle::{
    fd_directional_rotation, fd_grad_beta, fd_grad_collapsed, fd_grad_rotation, reference_integrate_vec, FDSettings,
};
use truncflow_core::scenario::{
    self, gaussian_matrix, gaussian_vec, random_antisymmetric, random_general, random_separated, ScenarioRng,
};
use truncflow_core::{vector, LayerParams, Matrix, ModelState, OrthogonalMatrix, TrainingSet};

/// Random cases per property.
pub const CASES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gradients,
    Monotonicity,
    Conservation,
    Equivalence,
    Oned,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [Suite::Gradients, Suite::Monotonicity, Suite::Conservation, Suite::Equivalence, Suite::Oned];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Monotonicity => "monotonicity",
            Suite::Conservation => "conservation",
            Suite::Equivalence => "equivalence",
            Suite::Oned => "oned",
            Suite::All => "all",
        }
    }
}

/// Deliberate defects for checking that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Negate the analytic rotation generator before comparing.
    OmegaSignFlip,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub cases: usize,
    /// Largest discrepancy over the cases; `null` when a case broke down.
    pub worst: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl PropertyResult {
    fn new(suite: Suite, name: &'static str, tolerance: f64, discrepancies: &[f64]) -> Self {
        // a NaN or a failed case poisons the property
        let worst = discrepancies.iter().try_fold(0.0f64, |w, &d| if d.is_nan() { None } else { Some(w.max(d)) });
        let pass = worst.is_some_and(|w| w <= tolerance);
        Self { suite: suite.name(), name, cases: discrepancies.len(), worst: worst.filter(|w| w.is_finite()), tolerance, pass }
    }

    pub fn line(&self) -> String {
        let worst = self.worst.map_or("broken".to_string(), |w| format!("{w:.3e}"));
        format!(
            "{} {}/{}: {} cases, worst {} (tolerance {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.cases,
            worst,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
    pub pass: bool,
    pub properties: Vec<PropertyResult>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `TRUNCFLOW_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("TRUNCFLOW_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub fn verify(suite: Suite, opts: &VerifyOptions) -> Report {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().expect("thread pool");
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    let properties = pool.install(|| {
        suites
            .iter()
            .flat_map(|&s| match s {
                Suite::Gradients => gradients(opts),
                Suite::Monotonicity => monotonicity(opts),
                Suite::Conservation => conservation(opts),
                Suite::Equivalence => equivalence(opts),
                Suite::Oned => oned(opts),
                Suite::All => unreachable!("expanded above"),
            })
            .collect::<Vec<_>>()
    });
    Report {
        suite,
        seed: opts.seed,
        threads: pool.current_num_threads(),
        fault: opts.fault,
        pass: properties.iter().all(|p| p.pass),
        properties,
    }
}

fn case_seed(seed: u64, tag: u64, case: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tag << 32) ^ case as u64
}

/// Runs `f` on `CASES` independently seeded cases in parallel, in order.
fn run_cases<T: Send>(opts: &VerifyOptions, tag: u64, f: impl Fn(&mut ScenarioRng, usize) -> T + Sync) -> Vec<T> {
    (0..CASES)
        .into_par_iter()
        .map(|k| f(&mut scenario::rng(case_seed(opts.seed, tag, k)), k))
        .collect()
}

fn flatten(rhs: &[LayerRhs]) -> Vec<f64> {
    rhs.iter()
        .flat_map(|r| r.beta_dot.iter().copied().chain(r.omega.as_matrix().as_slice().iter().copied()))
        .collect()
}

fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    vector::norm(&vector::sub(analytic, reference)) / vector::norm(reference).max(1e-8)
}

fn faulty(mut rhs: Vec<LayerRhs>, fault: Option<Fault>) -> Vec<LayerRhs> {
    if fault == Some(Fault::OmegaSignFlip) {
        for r in &mut rhs {
            r.omega = r.omega.scale(-1.0);
        }
    }
    rhs
}

fn fd_field(state: &ModelState, data: &TrainingSet, layers: usize) -> Option<Vec<LayerRhs>> {
    let fd = FDSettings::default();
    (0..layers)
        .map(|l| {
            Some(LayerRhs {
                beta_dot: vector::scale(&fd_grad_beta(state, data, l, &fd).ok()?, -1.0),
                omega: fd_grad_rotation(state, data, l, &fd).ok()?,
            })
        })
        .collect()
}

fn gradients(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Gradients;
    let effective = run_cases(opts, 1, |rng, k| {
        let q = 2 + k % 4;
        let Ok((state, data)) = random_separated(rng, q, 8) else { return f64::NAN };
        let Some(reference) = fd_field(&state, &data, q) else { return f64::NAN };
        let analytic: Option<Vec<LayerRhs>> = (0..q).map(|l| effective_rhs(&state, &data, l).ok()).collect();
        analytic.map_or(f64::NAN, |a| rel_err(&flatten(&faulty(a, opts.fault)), &flatten(&reference)))
    });
    let general = run_cases(opts, 2, |rng, k| {
        let q = 2 + k % 4;
        let Ok((state, data)) = random_general(rng, q, 1 + k % 3, q, 8) else { return f64::NAN };
        let Some(reference) = fd_field(&state, &data, state.depth()) else { return f64::NAN };
        general_rhs(&state, &data).map_or(f64::NAN, |a| rel_err(&flatten(&faulty(a, opts.fault)), &flatten(&reference)))
    });
    let directional = run_cases(opts, 3, |rng, k| {
        let q = 2 + k % 4;
        let Ok((state, data)) = random_general(rng, q, 2, q, 6) else { return f64::NAN };
        let Ok(rhs) = general_rhs(&state, &data) else { return f64::NAN };
        let rhs = faulty(rhs, opts.fault);
        let mut worst = 0.0f64;
        for (l, r) in rhs.iter().enumerate() {
            let omega = random_antisymmetric(rng, q, 1.0);
            let Ok(numeric) = fd_directional_rotation(&state, &data, l, &omega, &FDSettings::default()) else {
                return f64::NAN;
            };
            let analytic = (omega.as_matrix() * r.omega.as_matrix()).trace();
            worst = worst.max((numeric - analytic).abs() / analytic.abs().max(1e-3));
        }
        worst
    });
    vec![
        PropertyResult::new(s, "effective-vs-finite-differences", 1e-5, &effective),
        PropertyResult::new(s, "general-vs-finite-differences", 1e-5, &general),
        PropertyResult::new(s, "directional-derivative", 1e-5, &directional),
    ]
}

/// Largest `(C(s_{k+1}) − C(s_k)) / (1 + C(s_k))`.
fn worst_increase(costs: impl Iterator<Item = f64>) -> f64 {
    let costs: Vec<f64> = costs.collect();
    costs.windows(2).map(|w| (w[1] - w[0]) / (1.0 + w[0])).fold(0.0, f64::max)
}

fn worst_defect(traj: &Trajectory) -> f64 {
    traj.samples
        .iter()
        .flat_map(|s| s.state.layers().iter().map(|l| l.rotation().defect()))
        .fold(0.0, f64::max)
}

/// Simpson's rule on pairs of equal steps that share a sector pattern and
/// hold no pinned coordinate, against the differenced cost.
fn descent_identity(traj: &Trajectory) -> f64 {
    let mut worst = 0.0f64;
    for w in traj.samples.windows(3) {
        let same_pattern = w.windows(2).all(|p| {
            p[0].per_layer.iter().zip(&p[1].per_layer).all(|(a, b)| a.truncated_counts == b.truncated_counts)
        });
        let ds = w[1].s - w[0].s;
        let equal = ((w[2].s - w[1].s) - ds).abs() <= 1e-12;
        if !same_pattern || !equal || ds < 1e-4 || w.iter().any(|x| x.pinned > 0) {
            continue;
        }
        let differenced = (w[2].cost - w[0].cost) / (2.0 * ds);
        let exact = (w[0].cost_rate + 4.0 * w[1].cost_rate + w[2].cost_rate) / 6.0;
        if differenced.abs() > 1e-8 && exact.abs() > 1e-8 {
            worst = worst.max((differenced - exact).abs() / exact.abs());
        }
    }
    worst
}

fn monotonicity(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Monotonicity;
    let runs = run_cases(opts, 10, |rng, k| {
        let q = 2 + k % 3;
        let traj = if k % 2 == 0 {
            random_separated(rng, q, 6).and_then(|(state, data)| integrate_effective(&state, &data, 0.5, &IntegratorOptions::default()))
        } else {
            random_general(rng, q, 2, q, 6).and_then(|(state, data)| integrate_general(&state, &data, 0.5, &IntegratorOptions::default()))
        };
        traj.map_or((f64::NAN, f64::NAN), |t| (worst_increase(t.samples.iter().map(|x| x.cost)), worst_defect(&t)))
    });
    let fine = IntegratorOptions { initial_step: 1e-3, max_step: 1e-3, ..IntegratorOptions::default() };
    let identity = run_cases(opts, 11, |rng, k| {
        random_separated(rng, 2 + k % 3, 6)
            .and_then(|(state, data)| integrate_effective(&state, &data, 0.1, &fine))
            .map_or(f64::NAN, |t| descent_identity(&t))
    });
    let increase: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let defect: Vec<f64> = runs.iter().map(|r| r.1).collect();
    vec![
        PropertyResult::new(s, "cost-non-increasing", 1e-8, &increase),
        PropertyResult::new(s, "orthogonality-preserved", 1e-8, &defect),
        PropertyResult::new(s, "descent-identity", 1e-4, &identity),
    ]
}

fn random_collapsed(rng: &mut ScenarioRng, q: usize) -> CollapsedState {
    CollapsedState::new(gaussian_matrix(rng, q, q, 1.0), gaussian_matrix(rng, q, q, 1.0), gaussian_matrix(rng, q, q, 1.0))
        .expect("square")
}

fn conservation(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Conservation;
    let s_end = 2.0;
    let runs = run_cases(opts, 20, |rng, k| {
        let cs = random_collapsed(rng, 2 + k % 4);
        integrate_collapsed(&cs, s_end, &IntegratorOptions::default())
            .map_or((f64::NAN, f64::NAN), |t| (t.relative_drift() / s_end, worst_increase(t.samples.iter().map(|x| x.cost))))
    });
    let gradient = run_cases(opts, 21, |rng, k| {
        let cs = random_collapsed(rng, 2 + k % 4);
        let (gb, gw) = fd_grad_collapsed(&cs, &FDSettings::default());
        let (b_dot, w_dot) = collapsed_rhs(&cs);
        let analytic: Vec<f64> = b_dot.as_slice().iter().chain(w_dot.as_slice()).map(|v| -v).collect();
        let reference: Vec<f64> = gb.as_slice().iter().chain(gw.as_slice()).copied().collect();
        rel_err(&analytic, &reference)
    });
    let drift: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let increase: Vec<f64> = runs.iter().map(|r| r.1).collect();
    vec![
        PropertyResult::new(s, "invariant-drift-per-unit-s", 1e-6, &drift),
        PropertyResult::new(s, "collapsed-cost-non-increasing", 1e-8, &increase),
        PropertyResult::new(s, "collapsed-rhs-vs-finite-differences", 1e-6, &gradient),
    ]
}

fn equivalence(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Equivalence;
    let moment = run_cases(opts, 30, |rng, k| {
        // deeper random chains rarely stay clear of every kink
        let q = 2 + k % 3;
        let Ok((state, data)) = random_general(rng, q, q, q, 8) else { return f64::NAN };
        (0..q)
            .map(|l| match (effective_rhs(&state, &data, l), moment_form_rhs(&state, &data, l)) {
                (Ok(a), Ok(b)) => vector::max_abs(&vector::sub(&flatten(&[a]), &flatten(&[b]))),
                _ => f64::NAN,
            })
            .fold(0.0, f64::max)
    });
    let separated = run_cases(opts, 31, |rng, k| {
        let q = 2 + k % 4;
        let Ok((state, data)) = random_separated(rng, q, 8) else { return f64::NAN };
        let eff: Option<Vec<LayerRhs>> = (0..q).map(|l| effective_rhs(&state, &data, l).ok()).collect();
        match (eff, general_rhs(&state, &data)) {
            (Some(a), Ok(b)) => vector::max_abs(&vector::sub(&flatten(&a), &flatten(&b))),
            _ => f64::NAN,
        }
    });
    let projectors = run_cases(opts, 32, |rng, k| {
        let q = 2 + k % 4;
        let l = 1 + k % 3;
        let Ok((state, data)) = random_general(rng, q, l, 1, 8) else { return f64::NAN };
        let mut worst = 0.0f64;
        for x in data.cluster(0) {
            match (chained_projectors(&state, x, 0, l), chained_truncation(state.layers(), x, 0, l)) {
                (Ok(p), Ok(direct)) => {
                    worst = worst.max(vector::max_abs(&vector::sub(&direct, &p.apply(state.layers(), 0, x))))
                }
                _ => return f64::NAN,
            }
        }
        worst
    });
    let clustered = run_cases(opts, 33, |rng, k| {
        let q = 2 + k % 3;
        let n = q + k % 4;
        let x = gaussian_matrix(rng, q, n, 1.0);
        let y = gaussian_matrix(rng, q, n, 1.0);
        let w0 = gaussian_matrix(rng, q, q, 1.0);
        let s_end = 1.0;
        let Ok(closed) = clustered_explicit(&w0, &x, &y, s_end) else { return f64::NAN };
        let f = |w: &[f64]| clustered_rhs(&Matrix::from_fn(q, q, |i, j| w[i * q + j]), &x, &y).as_slice().to_vec();
        let ode = reference_integrate_vec(f, w0.as_slice(), s_end, 1e-3);
        vector::max_abs(&vector::sub(&ode, closed.as_slice())) / closed.max_abs().max(1.0)
    });
    vec![
        PropertyResult::new(s, "moment-form", 1e-12, &moment),
        PropertyResult::new(s, "general-equals-effective-when-separated", 1e-10, &separated),
        PropertyResult::new(s, "projector-expansion", 1e-10, &projectors),
        PropertyResult::new(s, "clustered-closed-form-vs-ode", 1e-6, &clustered),
    ]
}

struct OneDimCase {
    points: Vec<f64>,
    y: f64,
    b0: f64,
}

/// Sorted points at least 0.05 apart, a label above them and a threshold
/// between two neighbours (or below all of them for `j = 0`).
fn one_dim_case(rng: &mut ScenarioRng, k: usize) -> OneDimCase {
    let n = 1 + k % 6;
    let steps = gaussian_vec(rng, n + 2, 1.0);
    let mut points = Vec::with_capacity(n);
    let mut x = steps[0];
    for g in &steps[1..=n] {
        points.push(x);
        x += 0.05 + g.abs();
    }
    let y = points[n - 1] + 0.5 + steps[n + 1].abs();
    let j = k % (n + 1);
    let b0 = match j {
        0 => points[0] - 0.5,
        j if j == n => 0.5 * (points[n - 1] + y.min(points[n - 1] + 0.5)),
        j => 0.5 * (points[j - 1] + points[j]),
    };
    OneDimCase { points, y, b0 }
}

fn oned(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Oned;
    let runs = run_cases(opts, 40, |rng, k| {
        let c = one_dim_case(rng, k);
        let Ok(exact) = one_dim_flow(&c.points, c.y, c.b0) else { return [f64::NAN; 3] };
        let s_end = exact.crossings.last().copied().unwrap_or(0.0) + 2.0;
        let layer = LayerParams::new(OrthogonalMatrix::identity(1), vec![-c.b0]).expect("1×1");
        let state = ModelState::new(vec![layer], Matrix::identity(1), vec![vec![c.y]]).expect("1×1");
        let data = TrainingSet::new(vec![c.points.iter().map(|&x| vec![x]).collect()]).expect("nonempty");
        let Ok(traj) = integrate_effective(&state, &data, s_end, &IntegratorOptions::default()) else {
            return [f64::NAN; 3];
        };
        let times = if traj.events.len() == exact.crossings.len() {
            traj.events.iter().zip(&exact.crossings).map(|(e, t)| (e.s - t).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let scale = exact.gap(0.0);
        let gap = traj
            .samples
            .iter()
            .map(|x| (x.per_layer[0].beta_gap - exact.gap(x.s)).abs() / scale)
            .fold(0.0, f64::max);
        let mut rates = 0.0f64;
        for seg in exact.segments.iter().filter(|seg| seg.rate > 0.0) {
            let end = seg.end.min(s_end);
            let fitted = log_slope(traj.samples.iter().map(|x| (x.s, x.per_layer[0].beta_gap)), 0.5 * (seg.start + end), end);
            if let Some(slope) = fitted {
                rates = rates.max((-slope - seg.rate).abs() / seg.rate);
            }
        }
        [times, gap, rates]
    });
    let column = |i: usize| runs.iter().map(|r| r[i]).collect::<Vec<f64>>();
    vec![
        PropertyResult::new(s, "event-times", 1e-7, &column(0)),
        PropertyResult::new(s, "gap-profile", 1e-7, &column(1)),
        PropertyResult::new(s, "segment-rates", 1e-2, &column(2)),
    ]
}

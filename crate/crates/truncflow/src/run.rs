//! `truncflow run`: build the scenario a config describes, integrate it and
//! write `trajectory.csv`, `events.csv` and `summary.json`.

use std::path::Path;

use serde::Serialize;
use truncflow_core::flows::{
    clustered_explicit, clustered_limit, integrate, integrate_collapsed, one_dim_flow, CollapsedState,
    CollapsedTrajectory, FlowKind, IntegratorOptions, Trajectory,
};
use truncflow_core::fit::log_slope;
use truncflow_core::scenario::{self, all_positive_layers, fully_truncated_layers, identity_layers, random_orthogonal};
use truncflow_core::{LayerParams, Matrix, ModelState, OrthogonalMatrix, TrainingSet};

use crate::config::{DataDoc, ExplicitInit, Generator, InitSpec, Mode, Rows, ScenarioConfig};
use crate::error::CliError;
use crate::output::{events_csv, fmt_f64, trajectory_csv, CsvTable};

/// Clearance between the data and the hyperplanes placed by the
/// `fully-truncated` and `all-positive` generators.
pub const GENERATOR_MARGIN: f64 = 0.5;

/// `‖Ω‖` at or below this counts as stopped for the `s₁` estimate.
pub const OMEGA_ZERO: f64 = 1e-10;

/// A config turned into concrete initial data.
#[derive(Clone, Debug)]
pub enum Scenario {
    Model { kind: FlowKind, state: ModelState, data: TrainingSet, oned: bool },
    Collapsed(CollapsedState),
    Clustered { w0: Matrix, x: Matrix, y_ext: Matrix },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Phase {
    pub start: f64,
    pub end: f64,
    /// Least-squares slope of `ln cost` over the trailing half; in clustered
    /// mode the cost in excess of its limit.
    pub log_cost_slope: Option<f64>,
    /// Same fit for each layer's `‖β + ỹ‖`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub log_gap_slopes: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerState {
    pub rotation: Rows,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FinalState {
    Model { layers: Vec<LayerState>, output_map: Rows, labels: Rows },
    Collapsed { b: Rows, w: Rows, y: Rows },
    Clustered { w: Rows, limit: Rows },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneDimReference {
    /// Event times of the closed-form solution.
    pub crossings: Vec<f64>,
    /// Decay rate `n/N` of each closed-form segment.
    pub rates: Vec<f64>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub q: usize,
    pub layers: usize,
    pub s_end: f64,
    pub final_s: f64,
    pub samples: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub events: usize,
    pub phases: Vec<Phase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1_estimate: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation_warnings: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_orthogonality_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conservation_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<OneDimReference>,
    pub final_state: FinalState,
}

/// Everything `run` writes, held in memory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub trajectory: CsvTable,
    pub events: CsvTable,
    pub summary: Summary,
}

impl Artifacts {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, body) in [
            ("trajectory.csv", self.trajectory.render()),
            ("events.csv", self.events.render()),
            ("summary.json", self.summary_json()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

fn matrix(field: &str, rows: &Rows, q: usize) -> Result<Matrix, CliError> {
    let m = Matrix::from_rows(rows).map_err(|e| CliError::invalid(field, e.to_string()))?;
    if m.rows() != q || m.cols() != q {
        return Err(CliError::invalid(field, format!("expected {q}×{q}, got {}×{}", m.rows(), m.cols())));
    }
    if !m.is_finite() {
        return Err(CliError::invalid(field, "entries must be finite"));
    }
    Ok(m)
}

fn training_set(config: &ScenarioConfig) -> Result<(TrainingSet, Rows), CliError> {
    let source = config.data.as_ref().ok_or_else(|| CliError::invalid("data", "missing"))?;
    let doc = DataDoc::load(source)?;
    if doc.q != config.q {
        return Err(CliError::invalid("data.q", format!("{} does not match q = {}", doc.q, config.q)));
    }
    let data = TrainingSet::new(doc.clusters).map_err(|e| CliError::invalid("data.clusters", e.to_string()))?;
    if data.dim() != config.q {
        return Err(CliError::invalid("data.clusters", format!("points have dimension {}, expected {}", data.dim(), config.q)));
    }
    if data.clusters().iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::invalid("data.clusters", "coordinates must be finite"));
    }
    Ok((data, doc.labels))
}

fn check_labels(labels: &Rows, data: &TrainingSet) -> Result<(), CliError> {
    if labels.len() != data.num_clusters() {
        return Err(CliError::invalid(
            "data.labels",
            format!("{} labels for {} clusters", labels.len(), data.num_clusters()),
        ));
    }
    if labels.iter().any(|y| y.len() != data.dim()) {
        return Err(CliError::invalid("data.labels", format!("every label needs {} coordinates", data.dim())));
    }
    Ok(())
}

fn explicit_layers(init: &ExplicitInit, config: &ScenarioConfig) -> Result<Option<Vec<LayerParams>>, CliError> {
    let Some(specs) = &init.layers else { return Ok(None) };
    if let Some(l) = config.l {
        if l != specs.len() {
            return Err(CliError::invalid("init.layers", format!("{} layers given, l = {l}", specs.len())));
        }
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let field = format!("init.layers[{i}].rotation");
            let r = OrthogonalMatrix::new(matrix(&field, &spec.rotation, config.q)?)
                .map_err(|e| CliError::invalid(&field, e.to_string()))?;
            if spec.beta.len() != config.q || spec.beta.iter().any(|b| !b.is_finite()) {
                return Err(CliError::invalid(format!("init.layers[{i}].beta"), format!("needs {} finite entries", config.q)));
            }
            LayerParams::new(r, spec.beta.clone()).map_err(|e| CliError::invalid(format!("init.layers[{i}]"), e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn model_scenario(config: &ScenarioConfig) -> Result<Scenario, CliError> {
    let (data, labels) = training_set(config)?;
    check_labels(&labels, &data)?;
    let q = config.q;
    let oned = config.mode == Mode::Oned;
    if oned && data.num_clusters() != 1 {
        return Err(CliError::invalid("data.clusters", "mode oned takes a single cluster"));
    }
    let count = if oned { 1 } else { config.layer_count() };
    let (layers, output_map) = match &config.init {
        InitSpec::Named(g) => {
            let layers = match g {
                Generator::Identity => identity_layers(q, count),
                Generator::RandomOrthogonal(seed) => {
                    scenario::random_orthogonal_layers(&mut scenario::rng(*seed), q, count)
                }
                Generator::FullyTruncated => fully_truncated_layers(&data, count, GENERATOR_MARGIN),
                Generator::AllPositive => all_positive_layers(&data, count, GENERATOR_MARGIN),
            };
            (layers, Matrix::identity(q))
        }
        InitSpec::Explicit(e) => {
            let layers = match (explicit_layers(e, config)?, e.b0) {
                (Some(layers), _) => layers,
                (None, Some(b0)) if oned => {
                    vec![LayerParams::new(OrthogonalMatrix::identity(1), vec![-b0]).expect("1×1")]
                }
                _ => return Err(CliError::invalid("init.layers", format!("required for mode {}", config.mode))),
            };
            let output_map = match &e.output_map {
                Some(rows) => matrix("init.output_map", rows, q)?,
                None => Matrix::identity(q),
            };
            (layers, output_map)
        }
    };
    let state = ModelState::new(layers, output_map, labels).map_err(|e| CliError::invalid("init", e.to_string()))?;
    let kind = if config.mode == Mode::General { FlowKind::General } else { FlowKind::Effective };
    if kind == FlowKind::Effective && state.depth() != data.num_clusters() {
        return Err(CliError::invalid(
            "l",
            format!("mode {} pairs layer ℓ with cluster ℓ: {} layers, {} clusters", config.mode, state.depth(), data.num_clusters()),
        ));
    }
    Ok(Scenario::Model { kind, state, data, oned })
}

fn collapsed_scenario(config: &ScenarioConfig) -> Result<Scenario, CliError> {
    let q = config.q;
    let data_labels = || -> Result<Matrix, CliError> {
        let (data, labels) = training_set(config)?;
        check_labels(&labels, &data)?;
        if labels.len() != q {
            return Err(CliError::invalid("data.labels", format!("collapsed mode needs {q} clusters")));
        }
        Matrix::from_columns(&labels).map_err(|e| CliError::invalid("data.labels", e.to_string()))
    };
    let (b, w, y) = match &config.init {
        InitSpec::Named(Generator::Identity) => (Matrix::identity(q), Matrix::identity(q), data_labels()?),
        InitSpec::Named(Generator::RandomOrthogonal(seed)) => {
            let mut rng = scenario::rng(*seed);
            let b = random_orthogonal(&mut rng, q).into_matrix();
            let w = random_orthogonal(&mut rng, q).into_matrix();
            (b, w, data_labels()?)
        }
        InitSpec::Named(g) => return Err(CliError::invalid("init", format!("generator {g} has no meaning in mode collapsed"))),
        InitSpec::Explicit(e) => {
            let b = matrix("init.b", e.b.as_ref().ok_or_else(|| CliError::invalid("init.b", "required"))?, q)?;
            let w = matrix("init.w", e.w.as_ref().ok_or_else(|| CliError::invalid("init.w", "required"))?, q)?;
            let y = match &e.y {
                Some(rows) => matrix("init.y", rows, q)?,
                None => data_labels()?,
            };
            (b, w, y)
        }
    };
    Ok(Scenario::Collapsed(CollapsedState::new(b, w, y).map_err(|e| CliError::invalid("init", e.to_string()))?))
}

fn clustered_scenario(config: &ScenarioConfig) -> Result<Scenario, CliError> {
    let q = config.q;
    let (data, labels) = training_set(config)?;
    check_labels(&labels, &data)?;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for (l, cluster) in data.clusters().iter().enumerate() {
        for x in cluster {
            points.push(x.clone());
            targets.push(labels[l].clone());
        }
    }
    let x = Matrix::from_columns(&points).map_err(|e| CliError::invalid("data.clusters", e.to_string()))?;
    let y_ext = Matrix::from_columns(&targets).map_err(|e| CliError::invalid("data.labels", e.to_string()))?;
    let w0 = match &config.init {
        InitSpec::Named(Generator::Identity) => Matrix::identity(q),
        InitSpec::Named(Generator::RandomOrthogonal(seed)) => random_orthogonal(&mut scenario::rng(*seed), q).into_matrix(),
        InitSpec::Named(g) => return Err(CliError::invalid("init", format!("generator {g} has no meaning in mode clustered"))),
        InitSpec::Explicit(e) => matrix("init.w", e.w.as_ref().ok_or_else(|| CliError::invalid("init.w", "required"))?, q)?,
    };
    clustered_limit(&x, &y_ext).map_err(|e| CliError::invalid("data.clusters", e.to_string()))?;
    Ok(Scenario::Clustered { w0, x, y_ext })
}

/// Validates the config and builds its initial data.
pub fn prepare(config: &ScenarioConfig) -> Result<Scenario, CliError> {
    config.validate()?;
    match config.mode {
        Mode::Effective | Mode::General | Mode::Oned => model_scenario(config),
        Mode::Collapsed => collapsed_scenario(config),
        Mode::Clustered => clustered_scenario(config),
    }
}

/// Runs the config and returns the artifacts without touching the disk.
pub fn execute(config: &ScenarioConfig) -> Result<Artifacts, CliError> {
    let opts = config.tolerances.options()?;
    match prepare(config)? {
        Scenario::Model { kind, state, data, oned } => {
            let traj = integrate(kind, &state, &data, config.s_end, &opts)?;
            let closed_form = if oned { one_dim_reference(&state, &data) } else { None };
            Ok(model_artifacts(config, &traj, closed_form))
        }
        Scenario::Collapsed(cs) => Ok(collapsed_artifacts(config, &integrate_collapsed(&cs, config.s_end, &opts)?)),
        Scenario::Clustered { w0, x, y_ext } => clustered_artifacts(config, &w0, &x, &y_ext, &opts),
    }
}

/// [`execute`] followed by writing into the config's output directory.
pub fn run(config: &ScenarioConfig) -> Result<Artifacts, CliError> {
    let artifacts = execute(config)?;
    artifacts.write(&config.output)?;
    Ok(artifacts)
}

/// Cut points of the inter-event segments, with coincident events merged.
fn phase_bounds(event_times: impl IntoIterator<Item = f64>, s_end: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0];
    for t in event_times {
        if t > *cuts.last().expect("nonempty") + 1e-12 && t < s_end {
            cuts.push(t);
        }
    }
    cuts.push(s_end);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

fn trailing_half(start: f64, end: f64) -> (f64, f64) {
    (0.5 * (start + end), end)
}

fn model_artifacts(config: &ScenarioConfig, traj: &Trajectory, closed_form: Option<OneDimReference>) -> Artifacts {
    let first = &traj.samples[0];
    let last = traj.last();
    let depth = first.state.depth();
    let phases = phase_bounds(traj.events.iter().map(|e| e.s), last.s)
        .into_iter()
        .map(|(start, end)| {
            let (from, to) = trailing_half(start, end);
            Phase {
                start,
                end,
                log_cost_slope: log_slope(traj.samples.iter().map(|s| (s.s, s.cost)), from, to),
                log_gap_slopes: (0..depth)
                    .map(|l| log_slope(traj.samples.iter().map(|s| (s.s, s.per_layer[l].beta_gap)), from, to))
                    .collect(),
            }
        })
        .collect();
    let s1 = (0..depth)
        .map(|l| {
            let stopped = traj.samples.iter().rposition(|s| s.per_layer[l].omega_norm > OMEGA_ZERO);
            match stopped {
                None => Some(0.0),
                Some(i) if i + 1 < traj.samples.len() => Some(traj.samples[i + 1].s),
                Some(_) => None,
            }
        })
        .collect();
    let defect = traj
        .samples
        .iter()
        .flat_map(|s| s.state.layers().iter().map(|l| l.rotation().defect()))
        .fold(0.0, f64::max);
    let state = &last.state;
    let summary = Summary {
        mode: config.mode,
        q: config.q,
        layers: depth,
        s_end: config.s_end,
        final_s: last.s,
        samples: traj.samples.len(),
        initial_cost: first.cost,
        final_cost: last.cost,
        events: traj.events.len(),
        phases,
        s1_estimate: Some(s1),
        separation_warnings: (traj.kind == FlowKind::Effective).then_some(traj.separation_warnings),
        max_orthogonality_defect: Some(defect),
        conservation_drift: None,
        limit_distance: None,
        closed_form,
        final_state: FinalState::Model {
            layers: state
                .layers()
                .iter()
                .map(|l| LayerState { rotation: l.rotation().as_matrix().to_rows(), beta: l.beta().to_vec() })
                .collect(),
            output_map: state.output_map().to_rows(),
            labels: state.labels().to_vec(),
        },
    };
    Artifacts { trajectory: trajectory_csv(traj), events: events_csv(&traj.events), summary }
}

fn one_dim_reference(state: &ModelState, data: &TrainingSet) -> Option<OneDimReference> {
    let layer = state.layer(0);
    // the closed form assumes the unflipped rotation and a sorted cluster
    if layer.rotation().as_matrix()[(0, 0)] < 0.0 {
        return None;
    }
    let mut points: Vec<f64> = data.cluster(0).iter().map(|x| x[0]).collect();
    points.sort_by(f64::total_cmp);
    let sol = one_dim_flow(&points, state.pulled_label(0)[0], -layer.beta()[0]).ok()?;
    Some(OneDimReference {
        crossings: sol.crossings.clone(),
        rates: sol.segments.iter().map(|s| s.rate).collect(),
        frozen: sol.frozen,
    })
}

fn collapsed_artifacts(config: &ScenarioConfig, traj: &CollapsedTrajectory) -> Artifacts {
    let mut table = CsvTable::new(vec!["s".into(), "cost".into(), "invariant_drift".into()]);
    for s in &traj.samples {
        table.push(vec![fmt_f64(s.s), fmt_f64(s.cost), fmt_f64(s.invariant_drift)]);
    }
    let last = traj.last();
    let (from, to) = trailing_half(0.0, last.s);
    let summary = Summary {
        mode: config.mode,
        q: config.q,
        layers: config.q,
        s_end: config.s_end,
        final_s: last.s,
        samples: traj.samples.len(),
        initial_cost: traj.samples[0].cost,
        final_cost: last.cost,
        events: 0,
        phases: vec![Phase {
            start: 0.0,
            end: last.s,
            log_cost_slope: log_slope(traj.samples.iter().map(|s| (s.s, s.cost)), from, to),
            log_gap_slopes: Vec::new(),
        }],
        s1_estimate: None,
        separation_warnings: None,
        max_orthogonality_defect: None,
        conservation_drift: Some(traj.relative_drift()),
        limit_distance: None,
        closed_form: None,
        final_state: FinalState::Collapsed {
            b: last.state.b_matrix.to_rows(),
            w: last.state.w_out.to_rows(),
            y: last.state.y_matrix.to_rows(),
        },
    };
    Artifacts { trajectory: table, events: events_csv(&[]), summary }
}

fn clustered_artifacts(
    config: &ScenarioConfig,
    w0: &Matrix,
    x: &Matrix,
    y_ext: &Matrix,
    opts: &IntegratorOptions,
) -> Result<Artifacts, CliError> {
    let limit = clustered_limit(x, y_ext)?;
    let n = x.cols() as f64;
    let cost = |w: &Matrix| 0.5 * (&(w * x) - y_ext).frobenius_norm().powi(2) / n;
    let steps = (config.s_end / opts.max_step).ceil().max(1.0) as usize;
    let mut table = CsvTable::new(vec!["s".into(), "cost".into(), "limit_distance".into()]);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut w = w0.clone();
    for k in 0..=steps {
        let s = config.s_end * k as f64 / steps as f64;
        w = clustered_explicit(w0, x, y_ext, s)?;
        let offset = &w - &limit;
        let (c, d) = (cost(&w), offset.frobenius_norm());
        // the residual of the limit is orthogonal to the rows of X
        let excess = 0.5 * (&offset * x).frobenius_norm().powi(2) / n;
        table.push(vec![fmt_f64(s), fmt_f64(c), fmt_f64(d)]);
        samples.push((s, c, d, excess));
    }
    let (from, to) = trailing_half(0.0, config.s_end);
    let summary = Summary {
        mode: config.mode,
        q: config.q,
        layers: config.layer_count(),
        s_end: config.s_end,
        final_s: config.s_end,
        samples: samples.len(),
        initial_cost: samples[0].1,
        final_cost: samples[samples.len() - 1].1,
        events: 0,
        phases: vec![Phase {
            start: 0.0,
            end: config.s_end,
            log_cost_slope: log_slope(samples.iter().map(|&(s, _, _, e)| (s, e)), from, to),
            log_gap_slopes: Vec::new(),
        }],
        s1_estimate: None,
        separation_warnings: None,
        max_orthogonality_defect: None,
        conservation_drift: None,
        limit_distance: Some(samples[samples.len() - 1].2),
        closed_form: None,
        final_state: FinalState::Clustered { w: w.to_rows(), limit: limit.to_rows() },
    };
    Ok(Artifacts { trajectory: table, events: events_csv(&[]), summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_merge_coincident_events() {
        let b = phase_bounds([0.5, 0.5, 0.5 + 1e-14, 1.0, 3.0], 2.0);
        assert_eq!(b, vec![(0.0, 0.5), (0.5, 1.0), (1.0, 2.0)]);
        assert_eq!(phase_bounds([], 1.0), vec![(0.0, 1.0)]);
    }
}

//! Scenario configuration: a single JSON document.
//!
//! ```json
//! {
//!   "q": 2,
//!   "l": 2,
//!   "mode": "effective",
//!   "data": { "q": 2, "clusters": [[[1.0, 2.0]], [[-1.0, 0.5]]], "labels": [[3.0, 3.0], [0.0, 1.0]] },
//!   "init": "random-orthogonal(7)",
//!   "s_end": 5.0,
//!   "tolerances": { "max_step": 0.005 },
//!   "output": "out"
//! }
//! ```
//!
//! `data` is either the training-set document inline or a path to a file
//! holding it. `init` is a named generator (`identity`,
//! `random-orthogonal(<seed>)`, `fully-truncated`, `all-positive`) or an
//! object of explicit values:
//!
//! | mode                   | explicit fields                                           |
//! |------------------------|-----------------------------------------------------------|
//! | `effective`, `general` | `layers: [{rotation, beta}]`, optional `output_map`       |
//! | `oned`                 | `b0`, or `layers` as above                                |
//! | `collapsed`            | `b`, `w`, and `y` unless the data supplies labels         |
//! | `clustered`            | `w`                                                       |
//!
//! Matrices are row-major nested arrays. Relative paths in `data` and
//! `output` are resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use truncflow_core::flows::IntegratorOptions;

use crate::error::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Effective,
    General,
    Collapsed,
    Clustered,
    Oned,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Effective => "effective",
            Mode::General => "general",
            Mode::Collapsed => "collapsed",
            Mode::Clustered => "clustered",
            Mode::Oned => "oned",
        };
        f.write_str(name)
    }
}

/// The training-set document: `{"q", "clusters", "labels"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDoc {
    pub q: usize,
    pub clusters: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub labels: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Path(PathBuf),
    Inline(DataDoc),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Identity,
    RandomOrthogonal(u64),
    FullyTruncated,
    AllPositive,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Identity => f.write_str("identity"),
            Generator::RandomOrthogonal(seed) => write!(f, "random-orthogonal({seed})"),
            Generator::FullyTruncated => f.write_str("fully-truncated"),
            Generator::AllPositive => f.write_str("all-positive"),
        }
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        match s {
            "identity" => return Ok(Generator::Identity),
            "fully-truncated" => return Ok(Generator::FullyTruncated),
            "all-positive" => return Ok(Generator::AllPositive),
            _ => {}
        }
        s.strip_prefix("random-orthogonal(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|seed| seed.trim().parse().ok())
            .map(Generator::RandomOrthogonal)
            .ok_or_else(|| {
                format!(
                    "unknown generator {s:?}; expected identity, random-orthogonal(<seed>), fully-truncated or all-positive"
                )
            })
    }
}

impl Serialize for Generator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Generator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub rotation: Rows,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitInit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_map: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Named(Generator),
    Explicit(ExplicitInit),
}

/// Overrides for [`IntegratorOptions`]; absent fields keep the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproject_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Tolerances {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn options(&self) -> Result<IntegratorOptions, CliError> {
        let d = IntegratorOptions::default();
        let positive = |name: &str, v: Option<f64>, default: f64| -> Result<f64, CliError> {
            match v {
                None => Ok(default),
                Some(x) if x.is_finite() && x > 0.0 => Ok(x),
                Some(x) => Err(CliError::invalid(format!("tolerances.{name}"), format!("must be positive and finite, got {x}"))),
            }
        };
        let opts = IntegratorOptions {
            atol: positive("atol", self.atol, d.atol)?,
            rtol: positive("rtol", self.rtol, d.rtol)?,
            initial_step: positive("initial_step", self.initial_step, d.initial_step)?,
            max_step: positive("max_step", self.max_step, d.max_step)?,
            min_step: positive("min_step", self.min_step, d.min_step)?,
            event_tol: positive("event_tol", self.event_tol, d.event_tol)?,
            monotonicity_tol: positive("monotonicity_tol", self.monotonicity_tol, d.monotonicity_tol)?,
            reproject_every: self.reproject_every.unwrap_or(d.reproject_every).max(1),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
        };
        if opts.min_step > opts.max_step {
            return Err(CliError::invalid("tolerances.min_step", "exceeds max_step"));
        }
        Ok(opts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub q: usize,
    /// Number of hidden layers; defaults to `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    pub init: InitSpec,
    pub s_end: f64,
    #[serde(default, skip_serializing_if = "Tolerances::is_empty")]
    pub tolerances: Tolerances,
    pub output: PathBuf,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
        if let Some(DataSource::Path(p)) = &mut self.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn layer_count(&self) -> usize {
        self.l.unwrap_or(self.q)
    }

    /// Checks that do not need the data loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.q == 0 {
            return Err(CliError::invalid("q", "must be at least 1"));
        }
        if self.l == Some(0) {
            return Err(CliError::invalid("l", "must be at least 1"));
        }
        if !(self.s_end.is_finite() && self.s_end > 0.0) {
            return Err(CliError::invalid("s_end", format!("must be positive and finite, got {}", self.s_end)));
        }
        self.tolerances.options()?;
        let needs_data = !matches!(self.mode, Mode::Collapsed);
        if needs_data && self.data.is_none() {
            return Err(CliError::invalid("data", format!("required for mode {}", self.mode)));
        }
        if self.mode == Mode::Oned && self.q != 1 {
            return Err(CliError::invalid("q", "mode oned needs q = 1"));
        }
        if self.mode == Mode::Oned && self.l.is_some_and(|l| l != 1) {
            return Err(CliError::invalid("l", "mode oned has a single layer"));
        }
        match (&self.init, self.mode) {
            (InitSpec::Named(Generator::FullyTruncated | Generator::AllPositive), Mode::Collapsed | Mode::Clustered) => {
                Err(CliError::invalid("init", format!("generator {} has no meaning in mode {}", self.init_name(), self.mode)))
            }
            (InitSpec::Explicit(e), Mode::Effective | Mode::General) if e.layers.is_none() => {
                Err(CliError::invalid("init.layers", format!("required for mode {}", self.mode)))
            }
            (InitSpec::Explicit(e), Mode::Oned) if e.layers.is_none() && e.b0.is_none() => {
                Err(CliError::invalid("init.b0", "mode oned needs b0 or layers"))
            }
            (InitSpec::Explicit(e), Mode::Collapsed) if e.b.is_none() || e.w.is_none() => {
                Err(CliError::invalid(if e.b.is_none() { "init.b" } else { "init.w" }, "required for mode collapsed"))
            }
            (InitSpec::Explicit(e), Mode::Clustered) if e.w.is_none() => {
                Err(CliError::invalid("init.w", "required for mode clustered"))
            }
            _ => Ok(()),
        }
    }

    fn init_name(&self) -> String {
        match &self.init {
            InitSpec::Named(g) => g.to_string(),
            InitSpec::Explicit(_) => "explicit".into(),
        }
    }
}

impl DataDoc {
    pub fn load(source: &DataSource) -> Result<Self, CliError> {
        match source {
            DataSource::Inline(doc) => Ok(doc.clone()),
            DataSource::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::invalid("data", format!("{}: {e}", p.display())))
            }
        }
    }
}

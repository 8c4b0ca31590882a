//! The declarative experiment file.
//!
//! A config is a TOML document with the sections `problem`, `geometry`,
//! `oracle`, `schedule`, `run`, `bounds` and `output`. Keys the schema does
//! not know are rejected, all at once, with their full paths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use smd_core::bounds::{assumption_report, AssumptionReport, BoundParams, DEFAULT_T_MAX};
use smd_core::geometry::{ConstraintSet, Geometry, MirrorMap, NormPair};
use smd_core::oracle::{BiasModel, NoiseKind, NoiseModel, Oracle};
use smd_core::problems::{make_problem, ProblemKind};
use smd_core::smd::{Experiment, StepSchedule};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub geometry: GeometrySection,
    pub oracle: OracleSection,
    pub schedule: StepSchedule,
    pub run: RunSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    #[serde(flatten)]
    pub kind: ProblemKind,
    /// Optional cross-check of the dimension implied by the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub set: ConstraintSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    Euclidean,
    NegativeEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySection {
    pub map: MapName,
    pub norms: NormPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    #[serde(default = "no_bias")]
    pub bias: BiasModel,
    pub noise: NoiseKind,
    /// Declared bound E‖g̃‖*² ≤ ν².
    pub nu: f64,
    /// Declared sub-Gaussian parameter; enables the sub-Gaussian bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu1: Option<f64>,
}

fn no_bias() -> BiasModel {
    BiasModel::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: u64,
    #[serde(default = "one")]
    pub n_trials: u64,
    /// Defaults to powers of two, the horizon and any in-range thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit: bool,
    /// Defaults to the center of the feasible set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    /// Checkpoint range `[lo, hi]` for the rate fit; defaults to all checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_range: Option<[u64; 2]>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    #[serde(default = "default_t_max")]
    pub t_max: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    /// Overrides the fourth-moment estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_ceiling: Option<f64>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    #[serde(default = "default_tail_samples")]
    pub tail_samples: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            eps: Vec::new(),
            p: default_p(),
            t_max: default_t_max(),
            kappa1: None,
            nu2: None,
            a_ceiling: None,
            confidence: default_confidence(),
            moment_samples: default_moment_samples(),
            tail_samples: default_tail_samples(),
        }
    }
}

fn default_p() -> Vec<f64> {
    vec![0.9]
}
fn default_t_max() -> u64 {
    DEFAULT_T_MAX
}
fn default_confidence() -> f64 {
    0.99
}
fn default_moment_samples() -> usize {
    1_000_000
}
fn default_tail_samples() -> usize {
    200_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            formats: all_formats(),
        }
    }
}

fn default_directory() -> String {
    "out".into()
}
fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Jsonl]
}

/// An experiment assembled from a validated config.
#[derive(Debug, Clone)]
pub struct Built {
    pub experiment: Experiment,
    pub assumptions: AssumptionReport,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid TOML: {e}")))?;
        let cfg: ExperimentConfig = toml::Value::Table(raw.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
        let known = toml::Value::try_from(&cfg)
            .map_err(|e| CliError::Config(format!("cannot re-encode config: {e}")))?;
        let mut unknown = Vec::new();
        unknown_keys(&toml::Value::Table(raw), &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot encode config: {e}")))
    }

    /// Sorted-key JSON of everything except the output section.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config is always representable as JSON");
        if let serde_json::Value::Object(m) = &mut v {
            m.remove("output");
        }
        v.to_string()
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn build(&self) -> Result<Built, CliError> {
        let set = self.problem.set.clone().validated()?;
        let mut map = match self.geometry.map {
            MapName::Euclidean => MirrorMap::euclidean(),
            MapName::NegativeEntropy => MirrorMap::negative_entropy(),
        };
        if let Some(f) = self.geometry.entropy_floor {
            map = map.with_entropy_floor(f)?;
        }
        let geometry = Geometry::new(map, self.geometry.norms)?;
        let problem = make_problem(self.problem.kind.clone(), set, self.geometry.norms)?;
        if let Some(d) = self.problem.dim {
            if d != problem.dim() {
                return Err(CliError::Config(format!(
                    "problem.dim = {d} but the parameters have dimension {}",
                    problem.dim()
                )));
            }
        }
        let noise = NoiseModel::new(self.oracle.noise, self.oracle.nu, self.oracle.nu1)?;
        let oracle = Oracle::new(self.oracle.bias.clone(), noise, &problem)?;
        let schedule = StepSchedule::new(self.schedule.alpha0, self.schedule.k)?;
        let mut experiment = Experiment::new(problem, geometry, oracle, schedule)?;
        if let Some(x) = &self.run.start {
            experiment = experiment.with_start(x.clone())?;
        }
        if self.run.horizon == 0 {
            return Err(CliError::Config("run.horizon must be at least 1".into()));
        }
        if self.run.n_trials == 0 {
            return Err(CliError::Config("run.n_trials must be at least 1".into()));
        }
        if let Some(cps) = &self.run.checkpoints {
            if cps.iter().any(|&t| t == 0 || t > self.run.horizon) {
                return Err(CliError::Config(format!(
                    "run.checkpoints must lie in [1, {}]",
                    self.run.horizon
                )));
            }
        }
        if self.bounds.eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(CliError::Config("bounds.eps entries must be positive".into()));
        }
        if self.bounds.p.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(CliError::Config("bounds.p entries must lie in (0, 1)".into()));
        }
        if !(self.bounds.confidence > 0.0 && self.bounds.confidence < 1.0) {
            return Err(CliError::Config("bounds.confidence must lie in (0, 1)".into()));
        }
        let (b0, q) = experiment.oracle.bias.power_law();
        let assumptions = assumption_report(&experiment.schedule, b0, q);
        Ok(Built { experiment, assumptions })
    }

    /// Bound constants for an experiment built from this config.
    pub fn bound_params(&self, e: &Experiment, nu2: Option<f64>) -> Result<BoundParams, CliError> {
        let mut p = BoundParams::for_experiment(e, self.bounds.kappa1, nu2)?;
        p.t_max = self.bounds.t_max;
        p.a_ceiling = self.bounds.a_ceiling;
        Ok(p)
    }
}

fn unknown_keys(input: &toml::Value, known: &toml::Value, path: &str, out: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (input, known) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in a {
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &join(k), out),
                    None => out.push(join(k)),
                }
            }
        }
        (toml::Value::Array(a), toml::Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

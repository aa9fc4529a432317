//! Experiment configuration files.
//!
//! A configuration is a TOML document. Any key can be overridden from the
//! command line with a dotted path (`topology.byzantine=2`,
//! `algorithms.0.iterations=500`); array elements are addressed by index and
//! the value is parsed as a TOML value, falling back to a bare string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::engine::{AlgorithmSpec, Topology};
use crate::error::{Error, Result};
use crate::objective::{self, Dataset, LabelMap, LibsvmOptions, SyntheticSpec};
use crate::workers::Attack;

/// Environment variable naming the directory relative LibSVM paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "ROBUSTFL_DATA_DIR";

fn default_regularization() -> f64 {
    0.01
}

fn default_reference_tol() -> f64 {
    1e-10
}

fn default_tail() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian features, labels from a noisy random hyperplane. One shard
    /// of `samples_per_worker` samples per regular worker.
    Synthetic {
        seed: u64,
        samples_per_worker: usize,
        dim: usize,
        noise: f64,
    },
    /// LibSVM text file, split evenly over the regular workers after a
    /// seeded shuffle (the remainder is dropped).
    Libsvm {
        path: PathBuf,
        #[serde(default = "covtype_labels")]
        labels: LabelMap,
        #[serde(default = "default_true")]
        scale_unit: bool,
        /// Keep only the first `n` samples after a seeded shuffle.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

fn covtype_labels() -> LabelMap {
    LabelMap::Equals(2.0)
}

/// Relation between the seed-mean plateaus of two algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `left <= factor * right`
    AtMost,
    /// `left >= factor * right`
    AtLeast,
}

/// An expected ordering, evaluated per attack by the summary report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingCheck {
    pub left: String,
    pub relation: Relation,
    #[serde(default = "one")]
    pub factor: f64,
    pub right: String,
    /// Attack labels the check applies to; all configured attacks if empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<String>,
}

fn one() -> f64 {
    1.0
}

impl OrderingCheck {
    pub fn holds(&self, left: f64, right: f64) -> bool {
        match self.relation {
            Relation::AtMost => left <= self.factor * right,
            Relation::AtLeast => left >= self.factor * right,
        }
    }

    pub fn describe(&self) -> String {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        if self.factor == 1.0 {
            format!("{} {op} {}", self.left, self.right)
        } else {
            format!("{} {op} {} x {}", self.left, self.factor, self.right)
        }
    }
}

/// A grid of runs: every algorithm under every attack for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    /// Gradient-norm tolerance of the reference solver.
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    /// Fraction of the recorded iterations averaged into the plateau.
    #[serde(default = "default_tail")]
    pub plateau_tail: f64,
    /// Bundle directory; `results/<name>` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    /// Topology under attack. Cells with attack `none` run with the regular
    /// workers only.
    pub topology: Topology,
    pub attacks: Vec<Attack>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<OrderingCheck>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, e))?;
        Self::from_table(table)
    }

    /// Parses `text` and applies `key=value` overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: Table) -> Result<Self> {
        let cfg: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidConfig(format!("bad experiment name '{}'", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("algorithm list is empty".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::InvalidConfig("attack list is empty (use kind = \"none\")".into()));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::InvalidConfig("regularization must be positive".into()));
        }
        if !(self.reference_tol > 0.0) {
            return Err(Error::InvalidConfig("reference tolerance must be positive".into()));
        }
        if !(self.plateau_tail > 0.0 && self.plateau_tail <= 1.0) {
            return Err(Error::InvalidConfig("plateau tail must lie in (0, 1]".into()));
        }
        self.topology.validate()?;
        for a in &self.attacks {
            a.validate()?;
            if *a != Attack::None && self.topology.byzantine == 0 {
                return Err(Error::InvalidConfig(format!("attack {} needs B > 0", a.label())));
            }
        }
        let mut labels: Vec<&str> = self.attacks.iter().map(|a| a.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("each attack kind may appear once".into()));
        }
        let mut names: Vec<&str> = self.algorithms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("algorithm names must be unique".into()));
        }
        for a in &self.algorithms {
            if a.name.contains(['/', '\\']) {
                return Err(Error::InvalidConfig(format!("bad algorithm name '{}'", a.name)));
            }
        }
        if let Some(dim) = self.declared_dim() {
            for a in &self.algorithms {
                a.validate(dim)?;
            }
        }
        for c in &self.checks {
            for side in [&c.left, &c.right] {
                if !self.algorithms.iter().any(|a| &a.name == side) {
                    return Err(Error::InvalidConfig(format!("check refers to unknown algorithm '{side}'")));
                }
            }
        }
        Ok(())
    }

    /// Feature dimension when known without reading the data.
    pub fn declared_dim(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSource::Synthetic { dim, .. } => Some(*dim),
            DatasetSource::Libsvm { dim, .. } => *dim,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| Path::new("results").join(&self.name))
    }

    /// Builds the dataset sharded over the regular workers.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let r = self.topology.regular;
        match &self.dataset {
            DatasetSource::Synthetic { seed, samples_per_worker, dim, noise } => {
                objective::generate_synthetic(&SyntheticSpec {
                    seed: *seed,
                    regular_workers: r,
                    samples_per_worker: *samples_per_worker,
                    dim: *dim,
                    noise: *noise,
                })
            }
            DatasetSource::Libsvm { path, labels, scale_unit, subsample, dim, seed } => {
                let path = resolve_data_path(path);
                let opts = LibsvmOptions { dim: *dim, labels: *labels, scale_unit: false };
                let mut data = objective::load_libsvm(&path, &opts)?;
                if let Some(n) = subsample {
                    data = data.subsample(*n, *seed);
                }
                if *scale_unit {
                    data.scale_unit();
                }
                Dataset::partition(data, r, *seed)
            }
        }
    }
}

/// Relative paths are taken from [`DATA_DIR_ENV`] when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse { line, message: e.message().to_string() }
}

/// Sets the value at a dotted path, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::InvalidConfig(format!("override '{assignment}' has an empty key")));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let bad = |m: &str| Error::InvalidConfig(format!("override '{key}': {m}"));
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur: &mut Value = table
        .entry(path.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if path.is_empty() {
        *cur = value;
        return Ok(());
    }
    let rest: Vec<&str> = path[1..].iter().copied().chain(std::iter::once(*last)).collect();
    for (i, part) in rest.iter().enumerate() {
        let is_last = i + 1 == rest.len();
        cur = match cur {
            Value::Table(t) => {
                if is_last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()))
            }
            Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| bad("array segment must be an index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| bad(&format!("index {idx} out of range (length {len})")))?;
                if is_last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad("path goes through a non-table value")),
        };
    }
    unreachable!("loop returns on the last segment")
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

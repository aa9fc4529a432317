//! Experiment grids, report bundles and presets.
//!
//! A bundle directory holds:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the configuration file, byte for byte |
//! | `resolved.toml` | the configuration after `--set` overrides |
//! | `traces/<algorithm>__<attack>__seed<seed>.csv` | one trace per cell |
//! | `summary.json` | reference solution, per-cell and per-group plateaus |
//! | `report.md` | plateau table and ordering checks |

pub mod config;
pub mod preset;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{self, RunContext, RunTrace, Topology, TraceRecord};
use crate::error::{Error, Result};
use crate::objective::{self, Objective, ProblemConstants, Reference};
use crate::workers::Attack;

pub use config::{DatasetSource, ExperimentConfig, OrderingCheck, Relation, DATA_DIR_ENV};

/// CSV header of a trace file.
pub const TRACE_COLUMNS: [&str; 12] = [
    "t",
    "gap",
    "grad_norm",
    "uplink_bytes",
    "geomed_iterations",
    "geomed_gap",
    "inner_variation",
    "compression_residual",
    "ef_error",
    "max_grad_norm",
    "lemma1_lhs",
    "lemma1_rhs",
];

/// Floats with 17 significant digits; absent values are empty fields.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Renders records as CSV.
pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            fmt_float(r.gap),
            fmt_float(r.grad_norm),
            r.uplink_bytes,
            r.geomed_iterations.map(|i| i.to_string()).unwrap_or_default(),
            fmt_opt(r.geomed_gap),
            fmt_opt(r.inner_variation),
            fmt_opt(r.compression_residual),
            fmt_opt(r.ef_error),
            fmt_opt(r.max_grad_norm),
            fmt_opt(r.lemma1_lhs),
            fmt_opt(r.lemma1_rhs),
        );
    }
    out
}

/// Parses a trace written by [`trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_COLUMNS.join(",") => {}
        _ => return Err(Error::Parse { line: 1, message: "unexpected trace header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let perr = |m: String| Error::Parse { line: line_no, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != TRACE_COLUMNS.len() {
            return Err(perr(format!("expected {} fields, got {}", TRACE_COLUMNS.len(), f.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("bad number '{s}': {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        let int = |s: &str| s.parse::<u64>().map_err(|e| perr(format!("bad integer '{s}': {e}")));
        out.push(TraceRecord {
            t: int(f[0])? as usize,
            gap: float(f[1])?,
            grad_norm: float(f[2])?,
            uplink_bytes: int(f[3])?,
            geomed_iterations: if f[4].is_empty() { None } else { Some(int(f[4])? as usize) },
            geomed_gap: opt(f[5])?,
            inner_variation: opt(f[6])?,
            compression_residual: opt(f[7])?,
            ef_error: opt(f[8])?,
            max_grad_norm: opt(f[9])?,
            lemma1_lhs: opt(f[10])?,
            lemma1_rhs: opt(f[11])?,
        });
    }
    Ok(out)
}

/// Hex SHA-256 of the configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One `(algorithm, attack, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algorithm: String,
    pub method: String,
    pub attack: String,
    pub seed: u64,
    /// Path relative to the bundle directory.
    pub trace: String,
    /// Absent when the run diverged.
    pub plateau: Option<f64>,
    pub final_gap: Option<f64>,
    pub iterations: usize,
    pub uplink_bytes: u64,
    pub diverged: bool,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Seed statistics of one `(algorithm, attack)` pair. Plateaus are absent
/// when any seed diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub algorithm: String,
    pub attack: String,
    pub seeds: usize,
    pub plateau_mean: Option<f64>,
    pub plateau_min: Option<f64>,
    pub plateau_max: Option<f64>,
    pub uplink_bytes_mean: f64,
}

impl GroupSummary {
    /// Seed-mean plateau, `+inf` for diverged groups.
    pub fn plateau(&self) -> f64 {
        self.plateau_mean.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub workers: usize,
    pub per_worker: usize,
    pub dim: usize,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub name: String,
    pub config_sha256: String,
    pub overrides: Vec<String>,
    pub topology: Topology,
    pub dataset: DatasetSummary,
    pub reference: Reference,
    pub constants: Option<ProblemConstants>,
    pub plateau_tail: f64,
    pub wall_time_s: f64,
    pub cells: Vec<CellSummary>,
    pub groups: Vec<GroupSummary>,
    pub checks: Vec<OrderingCheck>,
}

impl BundleSummary {
    pub fn group(&self, algorithm: &str, attack: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.algorithm == algorithm && g.attack == attack)
    }

    pub fn any_diverged(&self) -> bool {
        self.cells.iter().any(|c| c.diverged)
    }

    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

/// File name of a cell's trace inside `traces/`.
pub fn trace_name(algorithm: &str, attack: &str, seed: u64) -> String {
    format!("{algorithm}__{attack}__seed{seed}.csv")
}

/// Objective, reference and constants shared by all cells.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub reference: Reference,
    pub constants: Option<ProblemConstants>,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let data = cfg.load_dataset()?;
        for a in &cfg.algorithms {
            a.validate(data.dim())?;
        }
        let objective = Objective::new(Arc::new(data), cfg.regularization)?;
        let reference = objective::solve_reference(&objective, cfg.reference_tol)?;
        let constants = objective::estimate_constants(&objective, &reference.x).ok();
        Ok(Problem { objective, reference, constants })
    }
}

struct Cell {
    algorithm: usize,
    attack: Attack,
    seed: u64,
}

struct CellResult {
    trace: RunTrace,
    diverged: bool,
    wall: f64,
}

/// Runs every cell of the grid; cells execute in parallel.
pub fn run_grid(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<(CellSummary, RunTrace)>> {
    let cells: Vec<Cell> = cfg
        .algorithms
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            cfg.attacks
                .iter()
                .flat_map(move |a| cfg.seeds.iter().map(move |s| Cell { algorithm: i, attack: *a, seed: *s }))
        })
        .collect();
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|c| {
            let spec = &cfg.algorithms[c.algorithm];
            let topology = if c.attack == Attack::None {
                Topology::new(cfg.topology.regular, 0)
            } else {
                cfg.topology
            };
            let ctx = RunContext {
                obj: &problem.objective,
                f_star: problem.reference.f_star,
                topology,
                attack: c.attack,
                seed: c.seed,
                x0: None,
            };
            let start = Instant::now();
            let (trace, diverged) = match engine::run(spec, &ctx) {
                Ok(t) => (t, false),
                Err(Error::Diverged { trace, t }) => {
                    log::error!("{} under {} (seed {}) diverged at iteration {t}", spec.name, c.attack.label(), c.seed);
                    (*trace, true)
                }
                Err(e) => return Err(e),
            };
            Ok(CellResult { trace, diverged, wall: start.elapsed().as_secs_f64() })
        })
        .collect();
    let mut out = Vec::with_capacity(cells.len());
    for (c, r) in cells.iter().zip(results) {
        let r = r?;
        let spec = &cfg.algorithms[c.algorithm];
        let plateau = if r.diverged { None } else { Some(engine::plateau_estimate(&r.trace, cfg.plateau_tail)?) };
        let last = r.trace.records.last();
        out.push((
            CellSummary {
                algorithm: spec.name.clone(),
                method: spec.method.label().to_string(),
                attack: c.attack.label().to_string(),
                seed: c.seed,
                trace: format!("traces/{}", trace_name(&spec.name, c.attack.label(), c.seed)),
                plateau: plateau.filter(|p| p.is_finite()),
                final_gap: last.map(|l| l.gap).filter(|g| g.is_finite()),
                iterations: last.map(|l| l.t).unwrap_or(0),
                uplink_bytes: last.map(|l| l.uplink_bytes).unwrap_or(0),
                diverged: r.diverged || plateau.is_some_and(|p| !p.is_finite()),
                wall_time_s: r.wall,
                warnings: r.trace.warnings.clone(),
            },
            r.trace,
        ));
    }
    Ok(out)
}

/// Seed statistics per `(algorithm, attack)` in configuration order.
pub fn group_cells(cfg: &ExperimentConfig, cells: &[CellSummary]) -> Vec<GroupSummary> {
    let mut groups = Vec::new();
    for alg in &cfg.algorithms {
        for atk in &cfg.attacks {
            let members: Vec<&CellSummary> =
                cells.iter().filter(|c| c.algorithm == alg.name && c.attack == atk.label()).collect();
            if members.is_empty() {
                continue;
            }
            let plateaus: Option<Vec<f64>> = members.iter().map(|c| c.plateau).collect();
            let n = members.len() as f64;
            let (mean, min, max) = match plateaus {
                Some(p) => (
                    Some(p.iter().sum::<f64>() / n),
                    p.iter().copied().reduce(f64::min),
                    p.iter().copied().reduce(f64::max),
                ),
                None => (None, None, None),
            };
            groups.push(GroupSummary {
                algorithm: alg.name.clone(),
                attack: atk.label().to_string(),
                seeds: members.len(),
                plateau_mean: mean,
                plateau_min: min,
                plateau_max: max,
                uplink_bytes_mean: members.iter().map(|c| c.uplink_bytes as f64).sum::<f64>() / n,
            });
        }
    }
    groups
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs a configuration and writes its bundle. `config_bytes` is the
/// configuration file as read from disk; it is echoed and hashed verbatim.
///
/// Diverged cells are part of the bundle; check
/// [`BundleSummary::any_diverged`].
pub fn run_experiment(config_bytes: &[u8], overrides: &[String], out_dir: Option<&Path>) -> Result<(PathBuf, BundleSummary)> {
    let text = std::str::from_utf8(config_bytes)
        .map_err(|_| Error::InvalidConfig("configuration is not valid UTF-8".into()))?;
    let cfg = ExperimentConfig::from_toml_with_overrides(text, overrides)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    let start = Instant::now();
    let problem = Problem::build(&cfg)?;
    log::info!(
        "{}: reference f* = {:.12e} after {} iterations",
        cfg.name,
        problem.reference.f_star,
        problem.reference.iterations
    );
    let results = run_grid(&cfg, &problem)?;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    write(&dir.join("config.toml"), config_bytes)?;
    write(&dir.join("resolved.toml"), cfg.to_toml_string()?)?;
    for (cell, trace) in &results {
        write(&dir.join(&cell.trace), trace_csv(&trace.records))?;
    }
    let cells: Vec<CellSummary> = results.into_iter().map(|(c, _)| c).collect();
    let data = problem.objective.data();
    let summary = BundleSummary {
        name: cfg.name.clone(),
        config_sha256: config_hash(config_bytes),
        overrides: overrides.to_vec(),
        topology: cfg.topology,
        dataset: DatasetSummary { workers: data.workers(), per_worker: data.per_worker(), dim: data.dim() },
        reference: problem.reference.clone(),
        constants: problem.constants,
        plateau_tail: cfg.plateau_tail,
        wall_time_s: start.elapsed().as_secs_f64(),
        groups: group_cells(&cfg, &cells),
        cells,
        checks: cfg.checks.clone(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize summary: {e}")))?;
    write(&dir.join("summary.json"), json)?;
    write(&dir.join("report.md"), report::render(&summary)?)?;
    Ok((dir, summary))
}

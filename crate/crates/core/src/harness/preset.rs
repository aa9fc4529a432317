//! Ready-made experiment grids.
//!
//! The full scale follows the reference setup: COVTYPE split over `R = 50`
//! regular workers, `B = 20` attackers, `rand_k` with `k/p = 0.1` on the
//! regular uplinks and `top_k` with the same `k` on the attackers,
//! `gamma = 0.01`, `beta = 0.1`, `eps = 1e-5`, thresholding fraction 0.3.
//!
//! The desk scale keeps every hyperparameter but shrinks the problem to a
//! synthetic logistic regression with `p = 20` (so `k = 2`), `J = 200`
//! samples per worker and `R = 10`, `B = 4`. That keeps `B / W = 2/7`, the
//! same attacker share as 20 of 70, and a full grid finishes in well under a
//! minute on one core. With fewer attackers, for example `B = 3` of 13, the
//! sign-flipping attack no longer reverses the plain mean (`3 * 3 < 10`), so
//! the non-robust baselines stop failing under it. Labels are noise free:
//! with label noise 0.5 the Gaussian attack leaves BROADCAST roughly 20
//! times above uncompressed robust SAGA at this size, because the jitter of
//! the iterate keeps `g - h` from vanishing and `rand_k` multiplies it by
//! `p / k`.
//!
//! Neither iteration counts nor the starting point are part of the
//! reference setup; the presets start at `x = 0` and run long enough for
//! every robust method to settle (see [`DESK_ITERATIONS`]).

use std::path::PathBuf;
use std::str::FromStr;

use super::config::{DatasetSource, ExperimentConfig, OrderingCheck, Relation};
use crate::aggregators::Aggregator;
use crate::compressors::Compressor;
use crate::engine::{AlgorithmSpec, Method, Topology, DEFAULT_GEOMED_EPS};
use crate::error::{Error, Result};
use crate::objective::{LabelMap, COVTYPE_DIM};
use crate::workers::Attack;

pub const STEP_SIZE: f64 = 0.01;
pub const BETA: f64 = 0.1;
pub const THRESHOLD_FRACTION: f64 = 0.3;

pub const DESK_DIM: usize = 20;
pub const DESK_SAMPLES_PER_WORKER: usize = 200;
pub const DESK_REGULAR: usize = 10;
pub const DESK_BYZANTINE: usize = 4;
pub const DESK_NOISE: f64 = 0.0;
pub const DESK_DATA_SEED: u64 = 2024;
pub const DESK_ITERATIONS: usize = 10_000;
pub const DESK_SEEDS: [u64; 3] = [1, 2, 3];

pub const FULL_REGULAR: usize = 50;
pub const FULL_BYZANTINE: usize = 20;
pub const FULL_ITERATIONS: usize = 50_000;
pub const FULL_GAP_STRIDE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Effect of removing stochastic and compression noise.
    NoiseReduction,
    /// BROADCAST against SignSGD and norm thresholding.
    BaselineComparison,
    /// Biased `top_k` compression with error feedback.
    ErrorFeedback,
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise_reduction" => Ok(Figure::NoiseReduction),
            "baseline_comparison" => Ok(Figure::BaselineComparison),
            "error_feedback" => Ok(Figure::ErrorFeedback),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preset '{s}' (expected noise_reduction, baseline_comparison or error_feedback)"
            ))),
        }
    }
}

impl Figure {
    pub fn label(&self) -> &'static str {
        match self {
            Figure::NoiseReduction => "noise_reduction",
            Figure::BaselineComparison => "baseline_comparison",
            Figure::ErrorFeedback => "error_feedback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::InvalidConfig(format!("unknown scale '{s}' (expected desk or full)"))),
        }
    }
}

struct Shape {
    dim: usize,
    iterations: usize,
    gap_stride: usize,
}

fn algo(shape: &Shape, name: &str, method: Method) -> AlgorithmSpec {
    let mut a = AlgorithmSpec::new(name, method, STEP_SIZE, shape.iterations);
    a.gap_stride = shape.gap_stride;
    a
}

fn k_of(dim: usize) -> usize {
    ((dim as f64 * 0.1).round() as usize).max(1)
}

fn check(left: &str, relation: Relation, factor: f64, right: &str, attacks: &[&str]) -> OrderingCheck {
    OrderingCheck {
        left: left.into(),
        relation,
        factor,
        right: right.into(),
        attacks: attacks.iter().map(|a| a.to_string()).collect(),
    }
}

fn algorithms(figure: Figure, shape: &Shape) -> (Vec<AlgorithmSpec>, Vec<OrderingCheck>) {
    let k = k_of(shape.dim);
    let rand_k = Compressor::RandK { k };
    let top_k = Compressor::TopK { k };
    let geomed = Aggregator::Geomed { eps: DEFAULT_GEOMED_EPS };
    let robust = |name: &str, method: Method| algo(shape, name, method).with_aggregator(geomed);
    match figure {
        Figure::NoiseReduction => {
            let algs = vec![
                algo(shape, "sgd", Method::PlainSgd),
                robust("br_sgd", Method::BrCompressedSgd),
                robust("br_compressed_sgd", Method::BrCompressedSgd).with_compressor(rand_k),
                robust("br_gdc_sgd", Method::BrGdcSgd).with_compressor(rand_k).with_beta(BETA),
                algo(shape, "saga", Method::PlainSaga),
                robust("br_saga", Method::BrCompressedSaga),
                robust("br_compressed_saga", Method::BrCompressedSaga).with_compressor(rand_k),
                robust("broadcast", Method::Broadcast).with_compressor(rand_k).with_beta(BETA),
            ];
            let mut checks = Vec::new();
            for plain in ["sgd", "saga"] {
                // Robust SGD and robust compressed methods without noise
                // reduction can do worse than the plain mean under sign
                // flipping, so the plain baselines are held against the
                // noise-reduced methods only.
                for r in ["br_saga", "broadcast"] {
                    checks.push(check(plain, Relation::AtLeast, 10.0, r, &[]));
                }
            }
            checks.push(check("br_compressed_sgd", Relation::AtLeast, 1.0, "br_compressed_saga", &[]));
            checks.push(check("br_compressed_saga", Relation::AtLeast, 1.0, "broadcast", &[]));
            checks.push(check("broadcast", Relation::AtMost, 3.0, "br_saga", &[]));
            (algs, checks)
        }
        Figure::BaselineComparison => {
            let algs = vec![
                robust("broadcast", Method::Broadcast).with_compressor(rand_k).with_beta(BETA),
                algo(shape, "signsgd", Method::Signsgd).with_compressor(Compressor::Sign),
                algo(shape, "norm_threshold_sgd", Method::NormThresholdSgd)
                    .with_compressor(rand_k)
                    .with_aggregator(Aggregator::NormThreshold { fraction: THRESHOLD_FRACTION }),
            ];
            let hard = ["sign_flip", "zero_grad"];
            let checks = vec![
                check("signsgd", Relation::AtLeast, 10.0, "broadcast", &hard),
                check("norm_threshold_sgd", Relation::AtLeast, 1.0, "broadcast", &hard),
            ];
            (algs, checks)
        }
        Figure::ErrorFeedback => {
            let mut br_ef_sgd = robust("br_ef_sgd", Method::BrCompressedSgd).with_compressor(top_k);
            br_ef_sgd.error_feedback = true;
            let algs = vec![
                algo(shape, "sgd", Method::PlainSgd),
                robust("br_sgd", Method::BrCompressedSgd),
                br_ef_sgd,
                algo(shape, "saga", Method::PlainSaga),
                robust("br_saga", Method::BrCompressedSaga),
                robust("ef_saga", Method::EfSaga).with_compressor(top_k),
            ];
            let checks = vec![check("ef_saga", Relation::AtMost, 3.0, "br_saga", &[])];
            (algs, checks)
        }
    }
}

/// Configuration for a figure at a scale. The full scale needs the COVTYPE
/// LibSVM file (relative paths resolve against
/// [`DATA_DIR_ENV`](super::config::DATA_DIR_ENV)).
pub fn preset(figure: Figure, scale: Scale, dataset_path: Option<PathBuf>) -> Result<ExperimentConfig> {
    let attacks = vec![Attack::GAUSSIAN, Attack::SIGN_FLIP, Attack::ZeroGrad];
    let name = format!(
        "{}_{}",
        figure.label(),
        match scale {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    );
    let cfg = match scale {
        Scale::Desk => {
            let shape = Shape { dim: DESK_DIM, iterations: DESK_ITERATIONS, gap_stride: 1 };
            let (algorithms, checks) = algorithms(figure, &shape);
            ExperimentConfig {
                name,
                seeds: DESK_SEEDS.to_vec(),
                regularization: 0.01,
                reference_tol: 1e-10,
                plateau_tail: 0.1,
                output_dir: None,
                dataset: DatasetSource::Synthetic {
                    seed: DESK_DATA_SEED,
                    samples_per_worker: DESK_SAMPLES_PER_WORKER,
                    dim: DESK_DIM,
                    noise: DESK_NOISE,
                },
                topology: Topology::new(DESK_REGULAR, DESK_BYZANTINE),
                attacks,
                algorithms,
                checks,
            }
        }
        Scale::Full => {
            let path = dataset_path.ok_or_else(|| {
                Error::InvalidConfig("the full scale needs the COVTYPE LibSVM file (--dataset)".into())
            })?;
            let shape = Shape { dim: COVTYPE_DIM, iterations: FULL_ITERATIONS, gap_stride: FULL_GAP_STRIDE };
            let (algorithms, checks) = algorithms(figure, &shape);
            ExperimentConfig {
                name,
                seeds: vec![1],
                regularization: 0.01,
                reference_tol: 1e-8,
                plateau_tail: 0.1,
                output_dir: None,
                dataset: DatasetSource::Libsvm {
                    path,
                    labels: LabelMap::Equals(2.0),
                    scale_unit: true,
                    subsample: None,
                    dim: Some(COVTYPE_DIM),
                    seed: 0,
                },
                topology: Topology::new(FULL_REGULAR, FULL_BYZANTINE),
                attacks,
                algorithms,
                checks,
            }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

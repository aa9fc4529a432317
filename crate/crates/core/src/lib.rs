//! Simulator for Byzantine-robust federated learning with compressed
//! uplinks.
//!
//! Regular workers hold shards of a regularized logistic-regression problem
//! and send compressed stochastic (SGD or SAGA) gradients; Byzantine workers
//! send crafted vectors. The master aggregates with a geometric median or one
//! of the baseline rules. Every random draw comes from a seeded per-worker
//! stream, so a run is a pure function of its configuration and seed.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregators;
pub mod compressors;
pub mod engine;
pub mod harness;
mod error;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod workers;

pub use aggregators::{geometric_median, Aggregator, GeomedResult};
pub use compressors::{CompressedMessage, Compressor};
pub use engine::{run, AlgorithmSpec, Method, RunContext, RunTrace, Simulation, Topology};
pub use error::{Error, Result};
pub use linalg::ModelVector;
pub use objective::{Dataset, Objective};
pub use workers::Attack;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/objective.md")]
    struct Objective;
    #[doc = include_str!("../../../book/src/compressors.md")]
    struct Compressors;
    #[doc = include_str!("../../../book/src/geomed.md")]
    struct Geomed;
    #[doc = include_str!("../../../book/src/workers.md")]
    struct Workers;
    #[doc = include_str!("../../../book/src/algorithms.md")]
    struct Algorithms;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/results.md")]
    struct Results;
}

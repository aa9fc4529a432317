#![allow(dead_code)]

use std::sync::Arc;

use robustfl::objective::{generate_synthetic, SyntheticSpec};
use robustfl::Objective;

pub fn synthetic(regular: usize, per_worker: usize, dim: usize, noise: f64, seed: u64) -> Objective {
    let spec = SyntheticSpec { seed, regular_workers: regular, samples_per_worker: per_worker, dim, noise };
    Objective::new(Arc::new(generate_synthetic(&spec).unwrap()), 0.01).unwrap()
}

/// Small instance for fast engine tests.
pub fn small() -> Objective {
    synthetic(5, 30, 6, 0.3, 11)
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

//! Regularized logistic regression over data partitioned across regular
//! workers.
//!
//! Sample `j` of worker `w` contributes
//! `f_{w,j}(x) = ln(1 + exp(-b <a, x>)) + (xi / 2) ||x||^2`,
//! the local cost of a worker is the mean over its `J` samples and the global
//! cost is the mean of the local costs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, ModelVector};
use crate::rng::{self, Purpose};

/// Number of samples in the COVTYPE dataset.
pub const COVTYPE_SAMPLES: usize = 581_012;
/// Feature dimension of the COVTYPE dataset.
pub const COVTYPE_DIM: usize = 54;

/// One labeled feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Exactly `-1.0` or `+1.0`.
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self> {
        if label != 1.0 && label != -1.0 {
            return Err(Error::InvalidInput(format!("label must be +1 or -1, got {label}")));
        }
        if !linalg::all_finite(&features) {
            return Err(Error::NonFinite("sample features"));
        }
        Ok(Sample { features, label })
    }
}

/// Labeled samples that have not been assigned to workers yet.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl LabeledData {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            check_dim(dim, s.features.len())?;
        }
        Ok(LabeledData { dim, samples })
    }

    /// Keeps the first `n` samples after a seeded shuffle.
    pub fn subsample(mut self, n: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0, Purpose::Partition);
        self.samples.shuffle(&mut rng);
        self.samples.truncate(n);
        self
    }

    /// Rescales every coordinate to `[0, 1]`; constant coordinates become 0.
    pub fn scale_unit(&mut self) {
        for c in 0..self.dim {
            let (lo, hi) = self.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.features[c]), hi.max(s.features[c]))
            });
            let span = hi - lo;
            for s in &mut self.samples {
                s.features[c] = if span > 0.0 { (s.features[c] - lo) / span } else { 0.0 };
            }
        }
    }
}

/// Samples laid out worker-major: row `w * J + j` is sample `j` of regular
/// worker `w`. Every worker holds exactly `J` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    workers: usize,
    per_worker: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Randomly assigns samples to `workers` regular workers, `floor(n / R)`
    /// each. The remainder is dropped. The assignment depends only on `seed`.
    pub fn partition(data: LabeledData, workers: usize, seed: u64) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidInput("at least one regular worker is required".into()));
        }
        let per_worker = data.samples.len() / workers;
        if per_worker == 0 {
            return Err(Error::InvalidInput(format!(
                "{} samples cannot fill {workers} workers",
                data.samples.len()
            )));
        }
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        let mut rng = rng::stream(seed, 1, Purpose::Partition);
        order.shuffle(&mut rng);
        order.truncate(workers * per_worker);
        let mut features = Vec::with_capacity(order.len() * data.dim);
        let mut labels = Vec::with_capacity(order.len());
        for &i in &order {
            features.extend_from_slice(&data.samples[i].features);
            labels.push(data.samples[i].label);
        }
        Ok(Dataset {
            dim: data.dim,
            workers,
            per_worker,
            features,
            labels,
        })
    }

    /// Builds a dataset from an explicit assignment; every worker must hold
    /// the same number of samples.
    pub fn from_workers(dim: usize, workers: Vec<Vec<Sample>>) -> Result<Self> {
        let per_worker = workers.first().map(Vec::len).unwrap_or(0);
        if workers.is_empty() || per_worker == 0 {
            return Err(Error::InvalidInput("every worker needs at least one sample".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for w in &workers {
            if w.len() != per_worker {
                return Err(Error::InvalidInput("workers hold unequal sample counts".into()));
            }
            for s in w {
                check_dim(dim, s.features.len())?;
                features.extend_from_slice(&s.features);
                labels.push(s.label);
            }
        }
        Ok(Dataset {
            dim,
            workers: workers.len(),
            per_worker,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of regular workers `R`.
    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Samples per worker `J`.
    pub fn per_worker(&self) -> usize {
        self.per_worker
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, worker: usize, j: usize) -> &[f64] {
        let row = worker * self.per_worker + j;
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn label(&self, worker: usize, j: usize) -> f64 {
        self.labels[worker * self.per_worker + j]
    }

    /// All rows in storage order.
    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    fn check_index(&self, worker: usize, j: usize) -> Result<()> {
        if worker >= self.workers || j >= self.per_worker {
            return Err(Error::InvalidInput(format!(
                "sample ({worker}, {j}) outside {} workers x {} samples",
                self.workers, self.per_worker
            )));
        }
        Ok(())
    }
}

/// `ln(1 + exp(-z))` without overflow.
pub fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-z))`, evaluated in the stable branch.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The regularized logistic-regression cost over a partitioned dataset.
#[derive(Debug, Clone)]
pub struct Objective {
    data: Arc<Dataset>,
    reg: f64,
}

impl Objective {
    pub fn new(data: Arc<Dataset>, reg: f64) -> Result<Self> {
        if !(reg >= 0.0) || !reg.is_finite() {
            return Err(Error::InvalidInput(format!("regularization must be >= 0, got {reg}")));
        }
        Ok(Objective { data, reg })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn regularization(&self) -> f64 {
        self.reg
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn sample_loss(&self, x: &[f64], worker: usize, j: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.data.check_index(worker, j)?;
        Ok(self.sample_loss_unchecked(x, worker, j))
    }

    fn sample_loss_unchecked(&self, x: &[f64], worker: usize, j: usize) -> f64 {
        let a = self.data.features(worker, j);
        let b = self.data.label(worker, j);
        log1p_exp_neg(b * linalg::dot(a, x)) + 0.5 * self.reg * linalg::norm_sq(x)
    }

    pub fn sample_grad(&self, x: &[f64], worker: usize, j: usize) -> Result<ModelVector> {
        check_dim(self.dim(), x.len())?;
        self.data.check_index(worker, j)?;
        let mut out = vec![0.0; x.len()];
        self.sample_grad_into(x, worker, j, &mut out);
        Ok(out)
    }

    /// Writes `-b * logistic(-b <a, x>) * a + xi * x` into `out`. Indices and
    /// dimensions are the caller's responsibility.
    pub fn sample_grad_into(&self, x: &[f64], worker: usize, j: usize, out: &mut [f64]) {
        let a = self.data.features(worker, j);
        let b = self.data.label(worker, j);
        let coef = -b * logistic(-b * linalg::dot(a, x));
        for ((o, ai), xi) in out.iter_mut().zip(a).zip(x) {
            *o = coef * ai + self.reg * xi;
        }
    }

    pub fn local_loss(&self, x: &[f64], worker: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.data.check_index(worker, 0)?;
        let j = self.data.per_worker;
        Ok((0..j).map(|i| self.sample_loss_unchecked(x, worker, i)).sum::<f64>() / j as f64)
    }

    pub fn local_grad(&self, x: &[f64], worker: usize) -> Result<ModelVector> {
        check_dim(self.dim(), x.len())?;
        self.data.check_index(worker, 0)?;
        Ok(self.local_grad_unchecked(x, worker))
    }

    pub(crate) fn local_grad_unchecked(&self, x: &[f64], worker: usize) -> ModelVector {
        let j = self.data.per_worker;
        let mut acc = vec![0.0; x.len()];
        for i in 0..j {
            let a = self.data.features(worker, i);
            let b = self.data.label(worker, i);
            let coef = -b * logistic(-b * linalg::dot(a, x));
            linalg::axpy(coef, a, &mut acc);
        }
        let inv = 1.0 / j as f64;
        for (o, xi) in acc.iter_mut().zip(x) {
            *o = *o * inv + self.reg * xi;
        }
        acc
    }

    /// Global cost `f(x)`, the mean over regular workers.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let data_term: f64 = self.data.rows().map(|(a, b)| log1p_exp_neg(b * linalg::dot(a, x))).sum();
        Ok(data_term / self.data.len() as f64 + 0.5 * self.reg * linalg::norm_sq(x))
    }

    /// Global gradient, the mean of the regular workers' local gradients.
    pub fn full_grad(&self, x: &[f64]) -> Result<ModelVector> {
        check_dim(self.dim(), x.len())?;
        let mut acc = vec![0.0; x.len()];
        for w in 0..self.data.workers {
            let g = self.local_grad_unchecked(x, w);
            linalg::axpy(1.0, &g, &mut acc);
        }
        let inv = 1.0 / self.data.workers as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(acc)
    }

    /// Crude global smoothness bound `xi + max ||a||^2 / 4`, valid for every
    /// sample cost and hence for `f`.
    pub fn smoothness_bound(&self) -> f64 {
        let max_row = self.data.rows().map(|(a, _)| linalg::norm_sq(a)).fold(0.0, f64::max);
        self.reg + 0.25 * max_row
    }
}

/// High-accuracy minimizer of the global cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x: ModelVector,
    pub f_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const REFERENCE_MAX_ITERS: usize = 500_000;

/// Full-gradient descent with backtracking until `||grad f|| <= tol`.
///
/// Steps start from twice the last accepted step and halve until the Armijo
/// condition holds. Once the predicted decrease drops below the resolution of
/// `f` the Armijo test is meaningless, and the step falls back to
/// `1 / smoothness_bound`, which always descends.
pub fn solve_reference(obj: &Objective, tol: f64) -> Result<Reference> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let safe_step = 1.0 / obj.smoothness_bound();
    let mut x = vec![0.0; obj.dim()];
    let mut fx = obj.loss(&x)?;
    let mut g = obj.full_grad(&x)?;
    let mut gnorm = linalg::norm(&g);
    let mut step = 1.0;
    let mut iterations = 0;
    while gnorm > tol {
        if iterations >= REFERENCE_MAX_ITERS {
            return Err(Error::ConvergenceFailure {
                what: "reference solver",
                residual: gnorm,
            });
        }
        iterations += 1;
        let gsq = gnorm * gnorm;
        step *= 2.0;
        let (next, f_next) = loop {
            let cand: ModelVector = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let f_cand = obj.loss(&cand)?;
            let predicted = 0.5 * step * gsq;
            if predicted <= 1e-14 * fx.abs().max(1e-300) || step <= safe_step {
                step = safe_step;
                let cand: ModelVector = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
                let f_cand = obj.loss(&cand)?;
                break (cand, f_cand);
            }
            if f_cand <= fx - predicted {
                break (cand, f_cand);
            }
            step *= 0.5;
        };
        x = next;
        fx = f_next;
        g = obj.full_grad(&x)?;
        gnorm = linalg::norm(&g);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite("reference solver iterate"));
        }
    }
    Ok(Reference {
        x,
        f_star: fx,
        grad_norm: gnorm,
        iterations,
    })
}

/// Problem constants measured at a point (normally `x*`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ProblemConstants {
    /// Strong-convexity modulus, taken as the regularization weight.
    pub mu: f64,
    /// Smoothness bound `xi + max_w lambda_max(A_w^T A_w / J) / 4`.
    pub lipschitz: f64,
    /// Outer variation `(1/R) sum_w ||grad f_w - grad f||^2`.
    pub outer_variation: f64,
    /// Inner variation, max over workers of `E_i ||grad f_{w,i} - grad f_w||^2`.
    pub inner_variation: f64,
    /// Max over workers of `E_i ||grad f_{w,i}||^2`.
    pub grad_bound_sq: f64,
}

const POWER_MAX_ITERS: usize = 20_000;

/// Largest eigenvalue of `(1/J) A_w^T A_w` for one worker by power iteration.
pub fn worker_gram_eigenvalue(obj: &Objective, worker: usize) -> Result<f64> {
    let data = obj.data();
    let p = data.dim();
    let j = data.per_worker();
    let gram = |v: &[f64]| -> ModelVector {
        let mut out = vec![0.0; p];
        for i in 0..j {
            let a = data.features(worker, i);
            linalg::axpy(linalg::dot(a, v), a, &mut out);
        }
        out.iter_mut().for_each(|o| *o /= j as f64);
        out
    };
    let mut rng = rng::stream(0x5eed, worker as u64, Purpose::Diagnostics);
    let mut v: ModelVector = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = linalg::norm(&v);
    v.iter_mut().for_each(|c| *c /= n);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mv = gram(&v);
        let next_lambda = linalg::dot(&v, &mv);
        let n = linalg::norm(&mv);
        if n == 0.0 {
            return Ok(0.0);
        }
        let converged = (next_lambda - lambda).abs() <= 1e-12 * next_lambda.abs().max(1e-300);
        lambda = next_lambda;
        v = mv.iter().map(|c| c / n).collect();
        if converged {
            return Ok(lambda);
        }
    }
    Err(Error::ConvergenceFailure {
        what: "power iteration",
        residual: lambda,
    })
}

/// `E_i ||grad f_{w,i}(x) - grad f_w(x)||^2` for one worker, exactly.
pub fn worker_inner_variation(obj: &Objective, x: &[f64], worker: usize) -> WorkerMoments {
    let j = obj.data().per_worker();
    let local = obj.local_grad_unchecked(x, worker);
    let mut g = vec![0.0; x.len()];
    let mut var = 0.0;
    let mut second = 0.0;
    for i in 0..j {
        obj.sample_grad_into(x, worker, i, &mut g);
        var += linalg::dist_sq(&g, &local);
        second += linalg::norm_sq(&g);
    }
    WorkerMoments {
        variance: var / j as f64,
        second_moment: second / j as f64,
        local,
    }
}

/// Exact per-worker sampling moments at a point.
#[derive(Debug, Clone)]
pub struct WorkerMoments {
    pub variance: f64,
    pub second_moment: f64,
    pub local: ModelVector,
}

pub fn estimate_constants(obj: &Objective, x: &[f64]) -> Result<ProblemConstants> {
    check_dim(obj.dim(), x.len())?;
    let r = obj.data().workers();
    let mut max_eig: f64 = 0.0;
    let mut inner: f64 = 0.0;
    let mut second: f64 = 0.0;
    let mut locals = Vec::with_capacity(r);
    for w in 0..r {
        max_eig = max_eig.max(worker_gram_eigenvalue(obj, w)?);
        let m = worker_inner_variation(obj, x, w);
        inner = inner.max(m.variance);
        second = second.max(m.second_moment);
        locals.push(m.local);
    }
    let global = linalg::mean(&locals);
    let outer = locals.iter().map(|l| linalg::dist_sq(l, &global)).sum::<f64>() / r as f64;
    Ok(ProblemConstants {
        mu: obj.regularization(),
        lipschitz: obj.regularization() + 0.25 * max_eig,
        outer_variation: outer,
        inner_variation: inner,
        grad_bound_sq: second,
    })
}

/// Parameters of the synthetic stand-in dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub regular_workers: usize,
    pub samples_per_worker: usize,
    pub dim: usize,
    /// Standard deviation of the Gaussian noise added to `<a, w>` before
    /// taking the sign.
    pub noise: f64,
}

/// Draws `R * J` samples: a unit-norm ground truth `w`, standard normal
/// features and labels `sign(<a, w> + noise * N(0, 1))` with `sign(0) = +1`.
pub fn generate_samples(spec: &SyntheticSpec) -> Result<LabeledData> {
    if spec.dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidInput("noise must be non-negative".into()));
    }
    let mut rng = rng::stream(spec.seed, 0, Purpose::Data);
    let mut w: ModelVector = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = linalg::norm(&w);
    w.iter_mut().for_each(|c| *c /= n);
    let total = spec.regular_workers * spec.samples_per_worker;
    let mut samples = Vec::with_capacity(total);
    for _ in 0..total {
        let a: ModelVector = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: f64 = StandardNormal.sample(&mut rng);
        let margin = linalg::dot(&a, &w) + spec.noise * z;
        let label = if margin >= 0.0 { 1.0 } else { -1.0 };
        samples.push(Sample { features: a, label });
    }
    LabeledData::new(spec.dim, samples)
}

/// Ground-truth direction used by [`generate_samples`] for a seed and
/// dimension.
pub fn synthetic_truth(seed: u64, dim: usize) -> ModelVector {
    let mut rng = rng::stream(seed, 0, Purpose::Data);
    let mut w: ModelVector = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = linalg::norm(&w);
    w.iter_mut().for_each(|c| *c /= n);
    w
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    Dataset::partition(generate_samples(spec)?, spec.regular_workers, spec.seed)
}

/// How raw LibSVM labels map to `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LabelMap {
    /// `+1` when the raw label equals the value, `-1` otherwise.
    Equals(f64),
    /// `+1` for positive raw labels, `-1` otherwise.
    Sign,
}

impl LabelMap {
    fn apply(self, raw: f64) -> f64 {
        let positive = match self {
            LabelMap::Equals(v) => raw == v,
            LabelMap::Sign => raw > 0.0,
        };
        if positive {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LibsvmOptions {
    /// Feature dimension; inferred from the largest index when `None`.
    pub dim: Option<usize>,
    pub labels: LabelMap,
    pub scale_unit: bool,
}

impl Default for LibsvmOptions {
    /// COVTYPE convention: class 2 is the positive class, features scaled to
    /// `[0, 1]`.
    fn default() -> Self {
        LibsvmOptions {
            dim: None,
            labels: LabelMap::Equals(2.0),
            scale_unit: true,
        }
    }
}

/// Parses LibSVM sparse text (`label idx:value ...`, 1-based indices).
pub fn parse_libsvm(text: &str, opts: &LibsvmOptions) -> Result<LabeledData> {
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().ok_or_else(|| perr("missing label".into()))?;
        let raw_label: f64 = label_tok
            .parse()
            .map_err(|_| perr(format!("bad label {label_tok:?}")))?;
        let mut pairs = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| perr(format!("bad index {idx:?}")))?;
            let val: f64 = val.parse().map_err(|_| perr(format!("bad value {val:?}")))?;
            if idx == 0 {
                return Err(perr("indices are 1-based".into()));
            }
            if idx <= last {
                return Err(perr("indices must be strictly increasing".into()));
            }
            if !val.is_finite() {
                return Err(perr("non-finite feature value".into()));
            }
            last = idx;
            max_index = max_index.max(idx);
            pairs.push((idx - 1, val));
        }
        rows.push((opts.labels.apply(raw_label), pairs));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("LibSVM input contains no samples".into()));
    }
    let dim = match opts.dim {
        Some(d) if d < max_index => {
            return Err(Error::InvalidInput(format!("feature index {max_index} exceeds dimension {d}")))
        }
        Some(d) => d,
        None => max_index,
    };
    let samples = rows
        .into_iter()
        .map(|(label, pairs)| {
            let mut features = vec![0.0; dim];
            for (i, v) in pairs {
                features[i] = v;
            }
            Sample { features, label }
        })
        .collect();
    let mut data = LabeledData::new(dim, samples)?;
    if opts.scale_unit {
        data.scale_unit();
    }
    Ok(data)
}

pub fn load_libsvm(path: &Path, opts: &LibsvmOptions) -> Result<LabeledData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        text.push_str(&line);
        text.push('\n');
    }
    parse_libsvm(&text, opts)
}

/// Writes samples as LibSVM text, omitting zero features. Values use the
/// shortest round-tripping representation.
pub fn write_libsvm(path: &Path, data: &LabeledData) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in &data.samples {
        let mut line = format!("{}", s.label);
        for (i, v) in s.features.iter().enumerate() {
            if *v != 0.0 {
                line.push_str(&format!(" {}:{}", i + 1, v));
            }
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

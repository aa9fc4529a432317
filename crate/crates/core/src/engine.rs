//! The master loop.
//!
//! One iteration has three phases. Regular workers compute their gradients
//! and encode them. Byzantine workers then see every regular gradient of the
//! iteration and send compressed malicious vectors. Finally the master
//! decodes all `W` messages in worker order (regular first), aggregates
//! them and takes the step `x <- x - gamma * direction`.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregators::{self, Aggregator, GeomedResult};
use crate::compressors::{CompressedMessage, Compressor};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, ModelVector};
use crate::objective::{worker_inner_variation, Objective};
use crate::rng::{self, Purpose};
use crate::workers::{self, Attack, ByzantineEncoding, WorkerSnapshot, WorkerState};

/// Approximation level of the geometric median unless configured otherwise.
pub const DEFAULT_GEOMED_EPS: f64 = 1e-5;
/// Re-draws per Lemma-1 probe.
pub const LEMMA1_DRAWS: usize = 100;

/// Update rule run by the master and the regular workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// SGD with mean aggregation.
    PlainSgd,
    /// SAGA with mean aggregation.
    PlainSaga,
    /// SGD, messages `Q(g)`, geometric median.
    BrCompressedSgd,
    /// SAGA, messages `Q(g)`, geometric median.
    BrCompressedSaga,
    /// SAGA with gradient-difference compression, geometric median.
    Broadcast,
    /// SGD with gradient-difference compression, geometric median.
    BrGdcSgd,
    /// SAGA with error feedback, geometric median.
    EfSaga,
    /// Sign messages and majority vote.
    Signsgd,
    /// SGD, messages `Q(g)`, drop the largest norms and average the rest.
    NormThresholdSgd,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::PlainSgd,
        Method::PlainSaga,
        Method::BrCompressedSgd,
        Method::BrCompressedSaga,
        Method::Broadcast,
        Method::BrGdcSgd,
        Method::EfSaga,
        Method::Signsgd,
        Method::NormThresholdSgd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::PlainSgd => "plain_sgd",
            Method::PlainSaga => "plain_saga",
            Method::BrCompressedSgd => "br_compressed_sgd",
            Method::BrCompressedSaga => "br_compressed_saga",
            Method::Broadcast => "broadcast",
            Method::BrGdcSgd => "br_gdc_sgd",
            Method::EfSaga => "ef_saga",
            Method::Signsgd => "signsgd",
            Method::NormThresholdSgd => "norm_threshold_sgd",
        }
    }

    pub fn uses_saga(&self) -> bool {
        matches!(self, Method::PlainSaga | Method::BrCompressedSaga | Method::Broadcast | Method::EfSaga)
    }

    pub fn uses_gdc(&self) -> bool {
        matches!(self, Method::Broadcast | Method::BrGdcSgd)
    }

    pub fn default_aggregator(&self) -> Aggregator {
        match self {
            Method::PlainSgd | Method::PlainSaga => Aggregator::Mean,
            Method::Signsgd => Aggregator::SignMajority,
            Method::NormThresholdSgd => Aggregator::NormThreshold { fraction: 0.3 },
            _ => Aggregator::Geomed { eps: DEFAULT_GEOMED_EPS },
        }
    }
}

fn default_one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// One algorithm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    /// Label used in file names and reports.
    pub name: String,
    pub method: Method,
    pub step_size: f64,
    pub iterations: usize,
    /// Gradient-difference rate; required by the GDC methods only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Overrides the method's default rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<Aggregator>,
    /// Regular-worker compressor. `signsgd` always sends signs.
    #[serde(default = "identity")]
    pub compressor: Compressor,
    /// Byzantine compressor; defaults to `top_k` with the same `k` when the
    /// regular compressor is `rand_k`, otherwise to the regular compressor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byzantine_compressor: Option<Compressor>,
    /// Error feedback on the regular workers. Always on for `ef_saga`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub error_feedback: bool,
    /// Error feedback on the Byzantine workers; follows the regular workers
    /// by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byzantine_error_feedback: Option<bool>,
    #[serde(default = "default_one", skip_serializing_if = "is_one")]
    pub batch_size: usize,
    /// Record the gap every this many iterations (the last one always).
    #[serde(default = "default_one", skip_serializing_if = "is_one")]
    pub gap_stride: usize,
    /// Exact inner-variation measurement every this many iterations; 0 = off.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub diagnostics_stride: usize,
    /// Lemma-1 probe every this many iterations; 0 = off.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub lemma1_stride: usize,
}

fn identity() -> Compressor {
    Compressor::Identity
}

impl AlgorithmSpec {
    /// Spec with defaults for everything but the essentials.
    pub fn new(name: impl Into<String>, method: Method, step_size: f64, iterations: usize) -> Self {
        AlgorithmSpec {
            name: name.into(),
            method,
            step_size,
            iterations,
            beta: None,
            aggregator: None,
            compressor: Compressor::Identity,
            byzantine_compressor: None,
            error_feedback: false,
            byzantine_error_feedback: None,
            batch_size: 1,
            gap_stride: 1,
            diagnostics_stride: 0,
            lemma1_stride: 0,
        }
    }

    pub fn with_compressor(mut self, c: Compressor) -> Self {
        self.compressor = c;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_aggregator(mut self, a: Aggregator) -> Self {
        self.aggregator = Some(a);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.plan(dim).map(|_| ())
    }

    fn plan(&self, dim: usize) -> Result<Plan> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("algorithm '{}': {m}", self.name)));
        if self.name.is_empty() {
            return Err(Error::InvalidConfig("algorithm name must not be empty".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if self.batch_size == 0 || self.gap_stride == 0 {
            return bad("batch size and gap stride must be at least 1".into());
        }
        let beta = match (self.method.uses_gdc(), self.beta) {
            (true, Some(b)) if b > 0.0 && b <= 1.0 => b,
            (true, Some(b)) => return bad(format!("beta must lie in (0, 1], got {b}")),
            (true, None) => return bad("gradient-difference methods need beta".into()),
            (false, Some(_)) => return bad("beta only applies to broadcast and br_gdc_sgd".into()),
            (false, None) => 0.0,
        };
        let compressor = match self.method {
            Method::Signsgd => match self.compressor {
                Compressor::Identity | Compressor::Sign => Compressor::Sign,
                other => return bad(format!("signsgd sends signs, not {other:?}")),
            },
            _ => self.compressor,
        };
        compressor.validate(dim)?;
        let byzantine_compressor = match (self.byzantine_compressor, self.method) {
            (Some(c), Method::Signsgd) if c != Compressor::Sign => {
                return bad("signsgd attackers must send signs".into());
            }
            (Some(c), _) => c,
            (None, _) => match compressor {
                Compressor::RandK { k } => Compressor::TopK { k },
                c => c,
            },
        };
        byzantine_compressor.validate(dim)?;
        let error_feedback = self.method == Method::EfSaga || self.error_feedback;
        if error_feedback && (self.method.uses_gdc() || self.method == Method::Signsgd) {
            return bad("error feedback does not combine with this method".into());
        }
        let encoding = if self.method.uses_gdc() {
            Encoding::Gdc
        } else if error_feedback {
            Encoding::ErrorFeedback
        } else {
            Encoding::Direct
        };
        let byzantine_encoding = if self.byzantine_error_feedback.unwrap_or(error_feedback) {
            if encoding != Encoding::ErrorFeedback {
                return bad("Byzantine error feedback needs error feedback".into());
            }
            ByzantineEncoding::ErrorFeedback
        } else {
            ByzantineEncoding::Direct
        };
        let aggregator = self.aggregator.unwrap_or_else(|| self.method.default_aggregator());
        aggregator.validate()?;
        Ok(Plan {
            method: self.method,
            step: self.step_size,
            beta,
            batch: self.batch_size,
            compressor,
            byzantine_compressor,
            encoding,
            byzantine_encoding,
            aggregator,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Direct,
    Gdc,
    ErrorFeedback,
}

/// Validated, defaults-resolved spec.
#[derive(Debug, Clone)]
struct Plan {
    method: Method,
    step: f64,
    beta: f64,
    batch: usize,
    compressor: Compressor,
    byzantine_compressor: Compressor,
    encoding: Encoding,
    byzantine_encoding: ByzantineEncoding,
    aggregator: Aggregator,
}

/// Worker counts. Regular workers are `0..regular`, Byzantine ones follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub workers: usize,
    pub regular: usize,
    pub byzantine: usize,
}

impl Topology {
    pub fn new(regular: usize, byzantine: usize) -> Self {
        Topology { workers: regular + byzantine, regular, byzantine }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regular + self.byzantine != self.workers {
            return Err(Error::InvalidConfig(format!(
                "R + B = {} + {} does not equal W = {}",
                self.regular, self.byzantine, self.workers
            )));
        }
        if self.regular == 0 {
            return Err(Error::InvalidConfig("need at least one regular worker".into()));
        }
        Ok(())
    }

    /// `B / W`.
    pub fn alpha(&self) -> f64 {
        self.byzantine as f64 / self.workers as f64
    }
}

/// `C_alpha = (2 - 2 alpha) / (1 - 2 alpha)` for `alpha = B / W`.
pub fn c_alpha(byzantine: usize, workers: usize) -> Result<f64> {
    if workers == 0 || 2 * byzantine >= workers {
        return Err(Error::InvalidInput(format!(
            "C_alpha needs B < W / 2, got B = {byzantine}, W = {workers}"
        )));
    }
    let a = byzantine as f64 / workers as f64;
    Ok((2.0 - 2.0 * a) / (1.0 - 2.0 * a))
}

/// What a single [`Simulation::step`] observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub direction: ModelVector,
    pub geomed: Option<GeomedResult>,
    /// Bytes sent by all `W` workers this iteration.
    pub bytes: u64,
    /// Mean of `||g_w - h_w||^2` over regular workers, before the update
    /// (gradient-difference methods only).
    pub compression_residual: Option<f64>,
    /// Largest regular stochastic-gradient norm this iteration.
    pub max_grad_norm: f64,
}

/// Step-by-step driver of one run.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    obj: &'a Objective,
    plan: Plan,
    topology: Topology,
    attack: Attack,
    x: ModelVector,
    t: usize,
    regular: Vec<WorkerState>,
    byzantine: Vec<WorkerState>,
    master_h: Vec<ModelVector>,
    bytes: u64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        spec: &AlgorithmSpec,
        obj: &'a Objective,
        topology: Topology,
        attack: Attack,
        seed: u64,
        x0: Option<&[f64]>,
    ) -> Result<Self> {
        let p = obj.dim();
        let plan = spec.plan(p)?;
        check_topology(obj, &topology, &attack)?;
        let x = match x0 {
            Some(x0) => {
                check_dim(p, x0.len())?;
                x0.to_vec()
            }
            None => vec![0.0; p],
        };
        let mut regular: Vec<WorkerState> =
            (0..topology.regular).map(|w| WorkerState::regular(w, p, seed)).collect();
        if plan.method.uses_saga() {
            for w in regular.iter_mut() {
                w.init_table(obj, &x)?;
            }
        }
        let byzantine = (topology.regular..topology.workers)
            .map(|w| WorkerState::byzantine(w, p, seed))
            .collect();
        Ok(Simulation {
            obj,
            plan,
            topology,
            attack,
            x,
            t: 0,
            regular,
            byzantine,
            master_h: vec![vec![0.0; p]; topology.workers],
            bytes: 0,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.t
    }

    /// Cumulative uplink bytes.
    pub fn uplink_bytes(&self) -> u64 {
        self.bytes
    }

    pub fn regular_workers(&self) -> &[WorkerState] {
        &self.regular
    }

    /// The master's copy of `h` for worker `w`.
    pub fn master_aux(&self, w: usize) -> &[f64] {
        &self.master_h[w]
    }

    /// Runs one iteration. A non-finite iterate is reported as
    /// [`Error::NonFinite`] and leaves the state unusable.
    pub fn step(&mut self) -> Result<StepReport> {
        let plan = &self.plan;
        let mut grads = Vec::with_capacity(self.topology.regular);
        let mut msgs: Vec<CompressedMessage> = Vec::with_capacity(self.topology.workers);
        let mut residual = 0.0;
        let mut max_grad_norm: f64 = 0.0;
        for w in self.regular.iter_mut() {
            let g = if plan.method.uses_saga() {
                w.saga_gradient(self.obj, &self.x, plan.batch)?
            } else {
                w.sgd_gradient(self.obj, &self.x, plan.batch)?
            };
            max_grad_norm = max_grad_norm.max(linalg::norm(&g));
            let msg = match plan.encoding {
                Encoding::Direct => w.plain_message(&g, &plan.compressor)?,
                Encoding::Gdc => {
                    residual += linalg::dist_sq(&g, w.aux());
                    w.gdc_message(&g, &plan.compressor, plan.beta)?
                }
                Encoding::ErrorFeedback => w.ef_message(&g, &plan.compressor)?,
            };
            grads.push(g);
            msgs.push(msg);
        }
        if self.topology.byzantine > 0 {
            let vectors = workers::byzantine_vectors(&self.attack, &grads, &mut self.byzantine)?;
            for (w, v) in self.byzantine.iter_mut().zip(&vectors) {
                msgs.push(workers::byzantine_message(w, v, &plan.byzantine_compressor, plan.byzantine_encoding)?);
            }
        }
        let bytes: u64 = msgs.iter().map(|m| m.byte_cost() as u64).sum();
        let lossless = plan.compressor.is_lossless();
        let decoded: Vec<ModelVector> = match plan.encoding {
            Encoding::Gdc => msgs
                .iter()
                .zip(self.master_h.iter_mut())
                .map(|(m, h)| workers::gdc_receive(h, m, plan.beta, lossless))
                .collect(),
            _ => msgs.iter().map(|m| m.decode()).collect(),
        };
        if plan.encoding == Encoding::Gdc {
            for (w, h) in self.regular.iter().zip(&self.master_h) {
                debug_assert!(w.aux() == h.as_slice(), "worker and master h diverged");
            }
        }
        let agg = plan.aggregator.aggregate(&decoded)?;
        linalg::axpy(-plan.step, &agg.direction, &mut self.x);
        self.t += 1;
        self.bytes += bytes;
        if !linalg::all_finite(&self.x) {
            return Err(Error::NonFinite("iterate"));
        }
        Ok(StepReport {
            direction: agg.direction,
            geomed: agg.geomed,
            bytes,
            compression_residual: (plan.encoding == Encoding::Gdc)
                .then(|| residual / self.topology.regular as f64),
            max_grad_norm,
        })
    }

    /// Mean over regular workers of the exact variance of the method's
    /// stochastic gradient at the current iterate.
    pub fn inner_variation(&self) -> Result<f64> {
        let mut acc = 0.0;
        for w in &self.regular {
            acc += if self.plan.method.uses_saga() {
                w.saga_variance(self.obj, &self.x)?
            } else {
                worker_inner_variation(self.obj, &self.x, w.id).variance
            };
        }
        Ok(acc / self.regular.len() as f64)
    }

    /// Largest `||e_w||^2` over regular workers.
    pub fn max_ef_error(&self) -> f64 {
        self.regular.iter().map(|w| linalg::norm_sq(w.residual())).fold(0.0, f64::max)
    }

    /// Serializable state for resuming.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            format: SNAPSHOT_FORMAT,
            t: self.t,
            x: self.x.clone(),
            uplink_bytes: self.bytes,
            master_h: self.master_h.clone(),
            workers: self.regular.iter().chain(&self.byzantine).map(|w| w.snapshot()).collect(),
        }
    }

    /// Rebuilds a simulation from a snapshot taken with the same spec,
    /// objective, topology and attack.
    pub fn resume(
        spec: &AlgorithmSpec,
        obj: &'a Objective,
        topology: Topology,
        attack: Attack,
        snap: &Snapshot,
    ) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::InvalidInput(format!("unknown snapshot format {}", snap.format)));
        }
        let p = obj.dim();
        let plan = spec.plan(p)?;
        check_topology(obj, &topology, &attack)?;
        check_dim(p, snap.x.len())?;
        check_dim(topology.workers, snap.workers.len())?;
        check_dim(topology.workers, snap.master_h.len())?;
        let mut regular = Vec::with_capacity(topology.regular);
        let mut byzantine = Vec::with_capacity(topology.byzantine);
        for (i, ws) in snap.workers.iter().enumerate() {
            check_dim(p, ws.h.len())?;
            let w = WorkerState::restore(ws)?;
            let expect_byz = i >= topology.regular;
            if w.id != i || ws.byzantine != expect_byz {
                return Err(Error::InvalidInput(format!("snapshot worker {i} does not match the topology")));
            }
            if plan.method.uses_saga() && !expect_byz && w.table().is_none() {
                return Err(Error::UninitializedTable);
            }
            if expect_byz {
                byzantine.push(w);
            } else {
                regular.push(w);
            }
        }
        Ok(Simulation {
            obj,
            plan,
            topology,
            attack,
            x: snap.x.clone(),
            t: snap.t,
            regular,
            byzantine,
            master_h: snap.master_h.clone(),
            bytes: snap.uplink_bytes,
        })
    }
}

fn check_topology(obj: &Objective, topology: &Topology, attack: &Attack) -> Result<()> {
    topology.validate()?;
    attack.validate()?;
    if obj.data().workers() != topology.regular {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} worker partitions but R = {}",
            obj.data().workers(),
            topology.regular
        )));
    }
    if topology.byzantine > 0 && *attack == Attack::None {
        return Err(Error::InvalidConfig("B > 0 needs an attack".into()));
    }
    Ok(())
}

/// Version tag written into snapshots.
pub const SNAPSHOT_FORMAT: u32 = 1;

/// Complete simulation state between iterations. Workers are listed in
/// worker order; floats round-trip exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: u32,
    pub t: usize,
    pub x: ModelVector,
    pub uplink_bytes: u64,
    pub master_h: Vec<ModelVector>,
    pub workers: Vec<WorkerSnapshot>,
}

/// One row of a run trace, describing the state after `t` iterations.
/// Step quantities (bytes aside) come from iteration `t` itself and are
/// absent at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `f(x^t) - f(x*)`.
    pub gap: f64,
    /// `||grad f(x^t)||`.
    pub grad_norm: f64,
    /// Cumulative over all workers.
    pub uplink_bytes: u64,
    pub geomed_iterations: Option<usize>,
    /// Certified objective gap of the aggregate.
    pub geomed_gap: Option<f64>,
    pub inner_variation: Option<f64>,
    pub compression_residual: Option<f64>,
    /// Largest `||e_w||^2` over regular workers (error feedback only).
    pub ef_error: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub lemma1_lhs: Option<f64>,
    pub lemma1_rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub method: Method,
    pub attack: Attack,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub final_x: ModelVector,
    /// Largest regular stochastic-gradient norm seen over the run.
    pub max_grad_norm: f64,
    pub warnings: Vec<String>,
}

/// Everything a run needs besides the algorithm.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub obj: &'a Objective,
    pub f_star: f64,
    pub topology: Topology,
    pub attack: Attack,
    pub seed: u64,
    pub x0: Option<ModelVector>,
}

fn warnings_for(spec: &AlgorithmSpec, plan: &Plan, ctx: &RunContext) -> Vec<String> {
    let mut out = Vec::new();
    let topo = &ctx.topology;
    let robust = matches!(plan.aggregator, Aggregator::Geomed { .. });
    if robust && 2 * topo.byzantine >= topo.workers {
        out.push(format!(
            "{}: B = {} is not below W / 2 = {}; the geometric median gives no guarantee",
            spec.name,
            topo.byzantine,
            topo.workers as f64 / 2.0
        ));
    }
    if plan.encoding == Encoding::Gdc {
        if let Some(delta) = plan.compressor.delta(ctx.obj.dim()) {
            if plan.beta * (1.0 + delta) > 1.0 {
                out.push(format!(
                    "{}: beta (1 + delta) = {:.3} exceeds 1",
                    spec.name,
                    plan.beta * (1.0 + delta)
                ));
            }
        }
    }
    for w in &out {
        warn!("{w}");
    }
    out
}

/// Runs `spec` for its configured number of iterations.
///
/// A non-finite iterate stops the run with [`Error::Diverged`], which carries
/// the trace recorded so far.
pub fn run(spec: &AlgorithmSpec, ctx: &RunContext) -> Result<RunTrace> {
    let mut sim = Simulation::new(spec, ctx.obj, ctx.topology, ctx.attack, ctx.seed, ctx.x0.as_deref())?;
    let mut trace = RunTrace {
        algorithm: spec.name.clone(),
        method: spec.method,
        attack: ctx.attack,
        seed: ctx.seed,
        records: Vec::new(),
        final_x: Vec::new(),
        max_grad_norm: 0.0,
        warnings: warnings_for(spec, &sim.plan, ctx),
    };
    let mut rec = base_record(&sim, ctx.f_star)?;
    if spec.diagnostics_stride > 0 {
        rec.inner_variation = Some(sim.inner_variation()?);
    }
    trace.records.push(rec);
    let total = spec.iterations;
    for t in 1..=total {
        let report = match sim.step() {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                trace.final_x = sim.x.clone();
                return Err(Error::Diverged { t, trace: Box::new(trace) });
            }
            Err(e) => return Err(e),
        };
        trace.max_grad_norm = trace.max_grad_norm.max(report.max_grad_norm);
        let diag = spec.diagnostics_stride > 0 && t % spec.diagnostics_stride == 0;
        let lemma = spec.lemma1_stride > 0 && t % spec.lemma1_stride == 0;
        if t % spec.gap_stride != 0 && t != total && !diag && !lemma {
            continue;
        }
        let mut rec = base_record(&sim, ctx.f_star)?;
        rec.geomed_iterations = report.geomed.as_ref().map(|g| g.iterations);
        rec.geomed_gap = report.geomed.as_ref().map(|g| g.certified_gap);
        rec.compression_residual = report.compression_residual;
        rec.max_grad_norm = Some(report.max_grad_norm);
        if sim.plan.encoding == Encoding::ErrorFeedback {
            rec.ef_error = Some(sim.max_ef_error());
        }
        if diag {
            rec.inner_variation = Some(sim.inner_variation()?);
        }
        if lemma {
            let probe = Lemma1Probe {
                obj: ctx.obj,
                x: &sim.x,
                topology: ctx.topology,
                attack: ctx.attack,
                compressor: sim.plan.compressor,
                byzantine_compressor: sim.plan.byzantine_compressor,
                eps: geomed_eps(&sim.plan.aggregator),
                draws: LEMMA1_DRAWS,
                seed: ctx.seed ^ (t as u64).rotate_left(32),
            };
            let m = measure_lemma1(&probe)?;
            rec.lemma1_lhs = Some(m.lhs);
            rec.lemma1_rhs = Some(m.rhs);
        }
        trace.records.push(rec);
    }
    trace.final_x = sim.x;
    Ok(trace)
}

fn geomed_eps(a: &Aggregator) -> f64 {
    match *a {
        Aggregator::Geomed { eps } => eps,
        _ => DEFAULT_GEOMED_EPS,
    }
}

fn base_record(sim: &Simulation, f_star: f64) -> Result<TraceRecord> {
    let gap = sim.obj.loss(&sim.x)? - f_star;
    let grad_norm = linalg::norm(&sim.obj.full_grad(&sim.x)?);
    Ok(TraceRecord {
        t: sim.t,
        gap,
        grad_norm,
        uplink_bytes: sim.bytes,
        geomed_iterations: None,
        geomed_gap: None,
        inner_variation: None,
        compression_residual: None,
        ef_error: None,
        max_grad_norm: None,
        lemma1_lhs: None,
        lemma1_rhs: None,
    })
}

/// Inputs of one Lemma-1 measurement at a frozen iterate. Regular vectors
/// are single-sample stochastic gradients; Byzantine vectors follow the
/// attack.
#[derive(Debug, Clone)]
pub struct Lemma1Probe<'a> {
    pub obj: &'a Objective,
    pub x: &'a [f64],
    pub topology: Topology,
    pub attack: Attack,
    /// Must be unbiased.
    pub compressor: Compressor,
    pub byzantine_compressor: Compressor,
    pub eps: f64,
    pub draws: usize,
    pub seed: u64,
}

/// Both sides of the bound and the four right-hand terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Record {
    /// Monte-Carlo mean of `||geomed{Q(z_w)} - z_bar||^2`.
    pub lhs: f64,
    pub rhs: f64,
    pub inner: f64,
    pub outer: f64,
    pub compression: f64,
    pub approximation: f64,
    pub c_alpha: f64,
    pub delta: f64,
}

impl Lemma1Record {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Measures both sides of the geometric-median noise bound. The right-hand
/// side uses exact sampling moments; the left-hand side is averaged over
/// `draws` independent re-draws of sampling, compression and attack noise.
pub fn measure_lemma1(probe: &Lemma1Probe) -> Result<Lemma1Record> {
    let topo = probe.topology;
    check_topology(probe.obj, &topo, &probe.attack)?;
    check_dim(probe.obj.dim(), probe.x.len())?;
    let c = c_alpha(topo.byzantine, topo.workers)?;
    if probe.draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let delta = match (probe.compressor.is_unbiased(), probe.compressor.delta(probe.obj.dim())) {
        (true, Some(d)) => d,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "the noise bound needs an unbiased compressor, got {:?}",
                probe.compressor
            )))
        }
    };
    let r = topo.regular;
    let moments: Vec<_> = (0..r).map(|w| worker_inner_variation(probe.obj, probe.x, w)).collect();
    let locals: Vec<&[f64]> = moments.iter().map(|m| m.local.as_slice()).collect();
    let z_bar = linalg::mean(&locals);
    let rf = r as f64;
    let inner = 2.0 * c * c / rf * moments.iter().map(|m| m.variance).sum::<f64>();
    let outer = 2.0 * c * c / rf * locals.iter().map(|l| linalg::dist_sq(l, &z_bar)).sum::<f64>();
    let compression = 2.0 * c * c * delta / rf * moments.iter().map(|m| m.second_moment).sum::<f64>();
    let approximation = 2.0 * probe.eps * probe.eps / ((topo.workers - 2 * topo.byzantine) as f64).powi(2);

    let mut rng = rng::stream(probe.seed, u64::MAX, Purpose::Diagnostics);
    let j = probe.obj.data().per_worker();
    let mut lhs = 0.0;
    for _ in 0..probe.draws {
        let z: Vec<ModelVector> = (0..r)
            .map(|w| probe.obj.sample_grad(probe.x, w, rng.random_range(0..j)))
            .collect::<Result<_>>()?;
        let mut q = Vec::with_capacity(topo.workers);
        for zw in &z {
            q.push(probe.compressor.compress(zw, &mut rng)?.decode());
        }
        for _ in 0..topo.byzantine {
            let v = workers::byzantine_vector(&probe.attack, &z, topo.byzantine, &mut rng)?;
            q.push(probe.byzantine_compressor.compress(&v, &mut rng)?.decode());
        }
        let g = aggregators::geometric_median(&q, probe.eps)?;
        lhs += linalg::dist_sq(&g.point, &z_bar);
    }
    lhs /= probe.draws as f64;
    Ok(Lemma1Record {
        lhs,
        rhs: inner + outer + compression + approximation,
        inner,
        outer,
        compression,
        approximation,
        c_alpha: c,
        delta,
    })
}

/// Mean of the last `ceil(tail_fraction * n)` values; `+inf` if any of them
/// is not finite.
pub fn tail_mean(values: &[f64], tail_fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to average".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let n = ((tail_fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - n..];
    if tail.iter().any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    Ok(tail.iter().sum::<f64>() / n as f64)
}

/// Mean optimality gap over the last `tail_fraction` of the recorded
/// iterations (the initial record excluded).
pub fn plateau_estimate(trace: &RunTrace, tail_fraction: f64) -> Result<f64> {
    let gaps: Vec<f64> = trace.records.iter().filter(|r| r.t > 0).map(|r| r.gap).collect();
    tail_mean(&gaps, tail_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{generate_synthetic, SyntheticSpec};
    use std::sync::Arc;

    fn objective(regular: usize) -> Objective {
        let spec = SyntheticSpec { seed: 3, regular_workers: regular, samples_per_worker: 20, dim: 5, noise: 0.3 };
        Objective::new(Arc::new(generate_synthetic(&spec).unwrap()), 0.01).unwrap()
    }

    #[test]
    fn c_alpha_values() {
        assert!((c_alpha(1, 5).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(c_alpha(0, 4).unwrap(), 2.0);
        assert!(c_alpha(2, 4).is_err());
    }

    #[test]
    fn spec_validation() {
        let ok = AlgorithmSpec::new("a", Method::Broadcast, 0.01, 10).with_beta(0.1);
        assert!(ok.validate(5).is_ok());
        assert!(AlgorithmSpec::new("a", Method::Broadcast, 0.01, 10).validate(5).is_err());
        assert!(AlgorithmSpec::new("a", Method::PlainSgd, 0.01, 10).with_beta(0.1).validate(5).is_err());
        assert!(AlgorithmSpec::new("a", Method::PlainSgd, 0.0, 10).validate(5).is_err());
        assert!(AlgorithmSpec::new("a", Method::PlainSgd, 0.1, 10)
            .with_compressor(Compressor::RandK { k: 6 })
            .validate(5)
            .is_err());
    }

    #[test]
    fn default_byzantine_compressor_is_top_k() {
        let s = AlgorithmSpec::new("a", Method::BrCompressedSgd, 0.01, 1).with_compressor(Compressor::RandK { k: 2 });
        assert_eq!(s.plan(5).unwrap().byzantine_compressor, Compressor::TopK { k: 2 });
    }

    #[test]
    fn topology_checks() {
        let obj = objective(3);
        let spec = AlgorithmSpec::new("a", Method::PlainSgd, 0.01, 1);
        assert!(Simulation::new(&spec, &obj, Topology::new(3, 1), Attack::None, 0, None).is_err());
        assert!(Simulation::new(&spec, &obj, Topology::new(2, 0), Attack::None, 0, None).is_err());
        let bad = Topology { workers: 5, regular: 3, byzantine: 1 };
        assert!(Simulation::new(&spec, &obj, bad, Attack::ZeroGrad, 0, None).is_err());
    }

    #[test]
    fn tail_mean_cases() {
        assert_eq!(tail_mean(&[5.0; 10], 0.1).unwrap(), 5.0);
        assert_eq!(tail_mean(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.5);
        assert_eq!(tail_mean(&[1.0, f64::NAN], 0.5).unwrap(), f64::INFINITY);
        assert!(tail_mean(&[], 0.5).is_err());
        assert!(tail_mean(&[1.0], 0.0).is_err());
    }

    #[test]
    fn trace_shape() {
        let obj = objective(3);
        let f_star = crate::objective::solve_reference(&obj, 1e-10).unwrap().f_star;
        let mut spec = AlgorithmSpec::new("a", Method::BrCompressedSaga, 0.05, 25);
        spec.gap_stride = 10;
        let ctx = RunContext { obj: &obj, f_star, topology: Topology::new(3, 0), attack: Attack::None, seed: 1, x0: None };
        let tr = run(&spec, &ctx).unwrap();
        let ts: Vec<usize> = tr.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 10, 20, 25]);
        assert!(tr.records.windows(2).all(|w| w[0].uplink_bytes <= w[1].uplink_bytes));
        assert_eq!(tr.records[3].uplink_bytes, 25 * 3 * 8 * 5);
    }

    #[test]
    fn snapshot_resume_matches_uninterrupted_run() {
        let obj = objective(4);
        let spec = AlgorithmSpec::new("b", Method::Broadcast, 0.05, 0)
            .with_beta(0.2)
            .with_compressor(Compressor::RandK { k: 2 });
        let topo = Topology::new(4, 1);
        let mut a = Simulation::new(&spec, &obj, topo, Attack::GAUSSIAN, 7, None).unwrap();
        for _ in 0..10 {
            a.step().unwrap();
        }
        let json = serde_json::to_string(&a.snapshot()).unwrap();
        let snap: Snapshot = serde_json::from_str(&json).unwrap();
        let mut b = Simulation::resume(&spec, &obj, topo, Attack::GAUSSIAN, &snap).unwrap();
        for _ in 0..10 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert_eq!(a.x(), b.x());
        assert_eq!(a.uplink_bytes(), b.uplink_bytes());
    }
}

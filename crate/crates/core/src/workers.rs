//! Per-worker message generation.
//!
//! Regular workers compute stochastic (SGD) or variance-reduced (SAGA)
//! gradients and encode them directly, as gradient differences against an
//! auxiliary vector `h`, or with error feedback. Byzantine workers see every
//! regular gradient of the current iteration and craft their vectors from
//! them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compressors::{self, CompressedMessage, Compressor};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, ModelVector};
use crate::objective::Objective;
use crate::rng::{self, Purpose, Stream};

/// Byzantine behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    /// No Byzantine workers take part.
    None,
    /// Regular mean plus isotropic Gaussian noise of the given per-coordinate
    /// variance.
    Gaussian { variance: f64 },
    /// `magnitude` times the regular mean.
    SignFlip { magnitude: f64 },
    /// Vectors whose sum cancels the sum of the regular vectors.
    ZeroGrad,
}

impl Attack {
    /// Settings used in the reference experiments: variance 30, `u = -3`.
    pub const GAUSSIAN: Attack = Attack::Gaussian { variance: 30.0 };
    pub const SIGN_FLIP: Attack = Attack::SignFlip { magnitude: -3.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Attack::Gaussian { variance } if !(variance >= 0.0) => {
                Err(Error::InvalidConfig(format!("attack variance must be >= 0, got {variance}")))
            }
            Attack::SignFlip { magnitude } if !magnitude.is_finite() => {
                Err(Error::InvalidConfig("sign-flip magnitude must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label used in file names and reports.
    pub fn label(&self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Gaussian { .. } => "gaussian",
            Attack::SignFlip { .. } => "sign_flip",
            Attack::ZeroGrad => "zero_grad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Regular,
    Byzantine,
}

/// Stored per-sample gradients of one regular worker and their running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SagaTable {
    dim: usize,
    grads: Vec<f64>,
    mean: ModelVector,
    updates: u64,
}

impl SagaTable {
    /// Table filled with `grad f_{w,j}(x0)` for every local sample.
    pub fn new(obj: &Objective, worker: usize, x0: &[f64]) -> Self {
        let dim = obj.dim();
        let j = obj.data().per_worker();
        let mut grads = vec![0.0; j * dim];
        for (i, row) in grads.chunks_exact_mut(dim).enumerate() {
            obj.sample_grad_into(x0, worker, i, row);
        }
        let mut table = SagaTable { dim, grads, mean: vec![0.0; dim], updates: 0 };
        table.mean = table.recomputed_mean();
        table
    }

    pub fn len(&self) -> usize {
        self.grads.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.grads[i * self.dim..(i + 1) * self.dim]
    }

    /// Running mean maintained incrementally.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Mean recomputed from scratch.
    pub fn recomputed_mean(&self) -> ModelVector {
        let mut m = vec![0.0; self.dim];
        for row in self.grads.chunks_exact(self.dim) {
            linalg::axpy(1.0, row, &mut m);
        }
        let inv = 1.0 / self.len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    /// Largest coordinate gap between the running and the recomputed mean.
    pub fn mean_drift(&self) -> f64 {
        let m = self.recomputed_mean();
        self.mean.iter().zip(&m).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Replaces entry `i`, updating the mean by `(new - old) / J`.
    fn replace(&mut self, i: usize, new: &[f64]) {
        let inv = 1.0 / self.len() as f64;
        let row = &mut self.grads[i * self.dim..(i + 1) * self.dim];
        for ((slot, m), n) in row.iter_mut().zip(self.mean.iter_mut()).zip(new) {
            *m += (n - *slot) * inv;
            *slot = *n;
        }
        self.updates += 1;
        // Full recomputation is O(Jp); sample it in debug builds.
        debug_assert!(!self.updates.is_multiple_of(512) || self.mean_drift() <= 1e-9, "SAGA running mean drifted");
    }
}

/// `h <- h + beta * d`. Shared by workers and the master so both copies of
/// `h` evolve bit for bit identically.
pub fn advance_aux(h: &mut [f64], d: &[f64], beta: f64) {
    for (hi, di) in h.iter_mut().zip(d) {
        *hi += beta * di;
    }
}

/// Master side of a gradient-difference channel: returns the approximation
/// `h + Q(u)` and advances `h` by `beta Q(u)`.
///
/// Over a lossless channel the message carries the gradient itself; the
/// master takes it as the approximation and moves `h` by `beta (g - h)`,
/// which in exact arithmetic is the same update.
pub fn gdc_receive(h: &mut [f64], msg: &CompressedMessage, beta: f64, lossless: bool) -> ModelVector {
    let decoded = msg.decode();
    if lossless {
        let diff = linalg::sub(&decoded, h);
        advance_aux(h, &diff, beta);
        decoded
    } else {
        let approx = linalg::add(h, &decoded);
        advance_aux(h, &decoded, beta);
        approx
    }
}

/// State owned by one worker.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    role: Role,
    table: Option<SagaTable>,
    h: ModelVector,
    e: ModelVector,
    sampling: Stream,
    compression: Stream,
    attack: Stream,
}

impl WorkerState {
    /// Regular worker `id`; its data is dataset partition `id`.
    pub fn regular(id: usize, dim: usize, seed: u64) -> Self {
        Self::new(id, Role::Regular, dim, seed)
    }

    pub fn byzantine(id: usize, dim: usize, seed: u64) -> Self {
        Self::new(id, Role::Byzantine, dim, seed)
    }

    fn new(id: usize, role: Role, dim: usize, seed: u64) -> Self {
        WorkerState {
            id,
            role,
            table: None,
            h: vec![0.0; dim],
            e: vec![0.0; dim],
            sampling: rng::stream(seed, id as u64, Purpose::Sampling),
            compression: rng::stream(seed, id as u64, Purpose::Compression),
            attack: rng::stream(seed, id as u64, Purpose::Attack),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn table(&self) -> Option<&SagaTable> {
        self.table.as_ref()
    }

    /// Gradient-difference auxiliary vector.
    pub fn aux(&self) -> &[f64] {
        &self.h
    }

    /// Error-feedback residual.
    pub fn residual(&self) -> &[f64] {
        &self.e
    }

    fn require_regular(&self) -> Result<()> {
        if self.role == Role::Regular {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("worker {} is not regular", self.id)))
        }
    }

    fn draw_indices(&mut self, j: usize, batch: usize) -> Vec<usize> {
        (0..batch.max(1)).map(|_| self.sampling.random_range(0..j)).collect()
    }

    /// Mini-batch stochastic gradient (batch 1 by default) at `x`.
    pub fn sgd_gradient(&mut self, obj: &Objective, x: &[f64], batch: usize) -> Result<ModelVector> {
        self.require_regular()?;
        check_dim(obj.dim(), x.len())?;
        let idx = self.draw_indices(obj.data().per_worker(), batch);
        let mut g = vec![0.0; x.len()];
        if obj.data().per_worker() == 1 {
            obj.sample_grad_into(x, self.id, 0, &mut g);
            return Ok(g);
        }
        let mut tmp = vec![0.0; x.len()];
        for &i in &idx {
            obj.sample_grad_into(x, self.id, i, &mut tmp);
            linalg::axpy(1.0, &tmp, &mut g);
        }
        if idx.len() > 1 {
            let inv = 1.0 / idx.len() as f64;
            g.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(g)
    }

    /// Fills the gradient table at the initial point.
    pub fn init_table(&mut self, obj: &Objective, x0: &[f64]) -> Result<()> {
        self.require_regular()?;
        check_dim(obj.dim(), x0.len())?;
        self.table = Some(SagaTable::new(obj, self.id, x0));
        Ok(())
    }

    /// Corrected gradient `grad f_i(x) - table[i] + mean(table)`, then
    /// `table[i] <- grad f_i(x)`.
    pub fn saga_gradient(&mut self, obj: &Objective, x: &[f64], batch: usize) -> Result<ModelVector> {
        self.require_regular()?;
        check_dim(obj.dim(), x.len())?;
        if self.table.is_none() {
            return Err(Error::UninitializedTable);
        }
        let idx = self.draw_indices(obj.data().per_worker(), batch);
        let table = self.table.as_mut().expect("checked above");
        let mut corr = vec![0.0; x.len()];
        let mut fresh = vec![0.0; x.len()];
        let mut updates = Vec::with_capacity(idx.len());
        for &i in &idx {
            obj.sample_grad_into(x, self.id, i, &mut fresh);
            for ((c, f), t) in corr.iter_mut().zip(&fresh).zip(table.entry(i)) {
                *c += f - t;
            }
            updates.push((i, fresh.clone()));
        }
        // With one sample the correction cancels the table exactly; skipping
        // it keeps the result bit-identical to the local gradient.
        let g: ModelVector = if table.len() == 1 {
            fresh.clone()
        } else {
            let inv = 1.0 / idx.len() as f64;
            corr.iter().zip(table.mean()).map(|(c, m)| c * inv + m).collect()
        };
        for (i, new) in updates {
            table.replace(i, &new);
        }
        Ok(g)
    }

    /// Exact `E_i ||g(i) - grad f_w(x)||^2` of the batch-1 SAGA gradient for
    /// the current table, without drawing or updating anything.
    pub fn saga_variance(&self, obj: &Objective, x: &[f64]) -> Result<f64> {
        let table = self.table.as_ref().ok_or(Error::UninitializedTable)?;
        let local = obj.local_grad(x, self.id)?;
        let offset = linalg::sub(&local, table.mean());
        let mut fresh = vec![0.0; x.len()];
        let mut acc = 0.0;
        for i in 0..table.len() {
            obj.sample_grad_into(x, self.id, i, &mut fresh);
            acc += fresh
                .iter()
                .zip(table.entry(i))
                .zip(&offset)
                .map(|((f, t), o)| (f - t - o).powi(2))
                .sum::<f64>();
        }
        Ok(acc / table.len() as f64)
    }

    /// Direct compression `Q(g)`.
    pub fn plain_message(&mut self, g: &[f64], spec: &Compressor) -> Result<CompressedMessage> {
        compressors::compress(spec, g, &mut self.compression)
    }

    /// Gradient-difference message `Q(g - h)`; advances `h` by
    /// `beta Q(g - h)`. Over a lossless channel the message carries `g`
    /// (see [`gdc_receive`]).
    pub fn gdc_message(&mut self, g: &[f64], spec: &Compressor, beta: f64) -> Result<CompressedMessage> {
        check_dim(self.h.len(), g.len())?;
        if spec.is_lossless() {
            let msg = compressors::compress(spec, g, &mut self.compression)?;
            let diff = linalg::sub(g, &self.h);
            advance_aux(&mut self.h, &diff, beta);
            return Ok(msg);
        }
        let u = linalg::sub(g, &self.h);
        let msg = compressors::compress(spec, &u, &mut self.compression)?;
        advance_aux(&mut self.h, &msg.decode(), beta);
        Ok(msg)
    }

    /// Error-feedback message `Q(g + e)`; keeps `e <- g + e - Q(g + e)`.
    pub fn ef_message(&mut self, g: &[f64], spec: &Compressor) -> Result<CompressedMessage> {
        let (msg, e) = compressors::ef_step(&self.e, g, spec, &mut self.compression)?;
        self.e = e;
        Ok(msg)
    }

    pub(crate) fn attack_stream(&mut self) -> &mut Stream {
        &mut self.attack
    }

    /// Complete state, including stream positions.
    pub fn snapshot(&self) -> WorkerSnapshot {
        WorkerSnapshot {
            id: self.id,
            byzantine: self.role == Role::Byzantine,
            table: self.table.as_ref().map(|t| TableSnapshot {
                grads: t.grads.clone(),
                mean: t.mean.clone(),
                updates: t.updates,
            }),
            h: self.h.clone(),
            e: self.e.clone(),
            sampling: StreamState::capture(&self.sampling),
            compression: StreamState::capture(&self.compression),
            attack: StreamState::capture(&self.attack),
        }
    }

    pub fn restore(snap: &WorkerSnapshot) -> Result<Self> {
        let dim = snap.h.len();
        check_dim(dim, snap.e.len())?;
        let table = match &snap.table {
            Some(t) => {
                check_dim(dim, t.mean.len())?;
                if dim == 0 || t.grads.is_empty() || t.grads.len() % dim != 0 {
                    return Err(Error::InvalidInput("snapshot table has a bad shape".into()));
                }
                Some(SagaTable { dim, grads: t.grads.clone(), mean: t.mean.clone(), updates: t.updates })
            }
            None => None,
        };
        Ok(WorkerState {
            id: snap.id,
            role: if snap.byzantine { Role::Byzantine } else { Role::Regular },
            table,
            h: snap.h.clone(),
            e: snap.e.clone(),
            sampling: snap.sampling.rebuild()?,
            compression: snap.compression.rebuild()?,
            attack: snap.attack.rebuild()?,
        })
    }
}

/// Position of a ChaCha stream: key, stream id and word counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    /// 32-byte key, hex encoded.
    pub key: String,
    pub stream: u64,
    /// Word position as a decimal string (it is 128 bits wide).
    pub word_pos: String,
}

impl StreamState {
    pub fn capture(s: &Stream) -> Self {
        StreamState {
            key: hex::encode(s.get_seed()),
            stream: s.get_stream(),
            word_pos: s.get_word_pos().to_string(),
        }
    }

    pub fn rebuild(&self) -> Result<Stream> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.key).map_err(|e| Error::InvalidInput(format!("stream key: {e}")))?;
        let key: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::InvalidInput("stream key must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::InvalidInput(format!("stream position: {e}")))?;
        let mut s = Stream::from_seed(key);
        s.set_stream(self.stream);
        s.set_word_pos(pos);
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSnapshot {
    /// Row-major `J x p` stored gradients.
    pub grads: Vec<f64>,
    pub mean: ModelVector,
    pub updates: u64,
}

/// Serializable [`WorkerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub id: usize,
    pub byzantine: bool,
    pub table: Option<TableSnapshot>,
    pub h: ModelVector,
    pub e: ModelVector,
    pub sampling: StreamState,
    pub compression: StreamState,
    pub attack: StreamState,
}

fn regular_sum<V: AsRef<[f64]>>(regular: &[V]) -> Result<ModelVector> {
    let first = regular
        .first()
        .ok_or_else(|| Error::InvalidInput("attack needs at least one regular vector".into()))?;
    let mut sum = vec![0.0; first.as_ref().len()];
    for g in regular {
        check_dim(sum.len(), g.as_ref().len())?;
        linalg::axpy(1.0, g.as_ref(), &mut sum);
    }
    Ok(sum)
}

/// The nominal malicious vector of one attacker given all regular vectors
/// of the iteration and the number of attackers `B`.
pub fn byzantine_vector<V: AsRef<[f64]>, R: Rng + ?Sized>(
    attack: &Attack,
    regular: &[V],
    byzantine: usize,
    rng: &mut R,
) -> Result<ModelVector> {
    attack.validate()?;
    let sum = regular_sum(regular)?;
    let r = regular.len() as f64;
    match *attack {
        Attack::None => Err(Error::InvalidConfig("no attack configured".into())),
        Attack::Gaussian { variance } => {
            let sd = variance.sqrt();
            Ok(sum
                .iter()
                .map(|s| s / r + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect())
        }
        Attack::SignFlip { magnitude } => Ok(sum.iter().map(|s| magnitude * (s / r)).collect()),
        Attack::ZeroGrad => {
            if byzantine == 0 {
                return Err(Error::InvalidConfig("zero-gradient attack needs B > 0".into()));
            }
            Ok(sum.iter().map(|s| -s / byzantine as f64).collect())
        }
    }
}

/// Malicious vectors for every attacker, in worker order.
///
/// For the zero-gradient attack the last attacker absorbs the rounding of
/// the others so that summing the regular vectors and then the attack
/// vectors in worker order gives exactly zero.
pub fn byzantine_vectors<V: AsRef<[f64]>>(
    attack: &Attack,
    regular: &[V],
    attackers: &mut [WorkerState],
) -> Result<Vec<ModelVector>> {
    let b = attackers.len();
    let mut out = Vec::with_capacity(b);
    for w in attackers.iter_mut() {
        out.push(byzantine_vector(attack, regular, b, w.attack_stream())?);
    }
    if matches!(attack, Attack::ZeroGrad) {
        let mut acc = regular_sum(regular)?;
        for v in &out[..b - 1] {
            linalg::axpy(1.0, v, &mut acc);
        }
        out[b - 1] = acc.iter().map(|a| -a).collect();
    }
    Ok(out)
}

/// How a Byzantine worker encodes its vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ByzantineEncoding {
    /// `Q(v)`, also used in gradient-difference mode.
    Direct,
    /// Error feedback on the attacker's own residual.
    ErrorFeedback,
}

/// Compresses a malicious vector with the attacker's compressor.
pub fn byzantine_message(
    worker: &mut WorkerState,
    vector: &[f64],
    spec: &Compressor,
    encoding: ByzantineEncoding,
) -> Result<CompressedMessage> {
    match encoding {
        ByzantineEncoding::Direct => worker.plain_message(vector, spec),
        ByzantineEncoding::ErrorFeedback => worker.ef_message(vector, spec),
    }
}

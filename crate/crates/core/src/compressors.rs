//! Uplink compressors, their wire representation and byte accounting.
//!
//! Unbiased compressors (`rand_k`, `rand_quant`) satisfy `E[Q(x)] = x` and
//! `E||Q(x) - x||^2 <= delta ||x||^2`. General compressors (`top_k`,
//! `l1_sign`) satisfy `||Q(x) - x||^2 <= (1 - kappa) ||x||^2` and may be
//! biased; they are paired with error feedback.
//!
//! # Wire format
//!
//! Every message serializes to a little-endian frame
//!
//! ```text
//! tag: u8 | dim: u32 | [kind header] | payload
//! ```
//!
//! | kind      | tag | kind header       | payload                                    | payload bytes            |
//! |-----------|-----|-------------------|--------------------------------------------|--------------------------|
//! | dense     | 0   | none              | `dim` x f64                                | `8 p`                    |
//! | sparse    | 1   | count: u32        | `count` x u32 index, then `count` x f64     | `12 k`                   |
//! | sign      | 2   | none              | bitmask (bit set = negative), then scale f64 | `ceil(p / 8) + 8`        |
//! | quantized | 3   | levels: u32       | lo f64, hi f64, packed codes               | `16 + ceil(p b / 8)`     |
//!
//! where `b = ceil(log2(s + 1))` bits per quantization code, packed LSB
//! first. Only the payload counts as uplink traffic; the frame header is
//! transport overhead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, ModelVector};

/// Bytes per sparse index.
pub const INDEX_BYTES: usize = 4;
/// Bytes per transmitted real value.
pub const VALUE_BYTES: usize = 8;

/// Compression operator applied by a worker before sending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compressor {
    /// No compression.
    Identity,
    /// Keep `k` uniformly chosen coordinates scaled by `p / k`.
    RandK { k: usize },
    /// Stochastic rounding onto `levels + 1` equispaced points spanning
    /// `[-||x||_inf, ||x||_inf]`.
    RandQuant { levels: u32 },
    /// Keep the `k` largest-magnitude coordinates, ties to the lower index.
    TopK { k: usize },
    /// `(||x||_1 / p) sign(x)`.
    L1Sign,
    /// Plain `sign(x)` with unit scale, as transmitted by SignSGD.
    Sign,
}

impl Compressor {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Compressor::RandK { k } | Compressor::TopK { k } if k == 0 || k > dim => Err(Error::InvalidConfig(
                format!("compressor k = {k} must lie in 1..={dim}"),
            )),
            Compressor::RandQuant { levels: 0 } => Err(Error::InvalidConfig("quantizer needs at least one level".into())),
            _ => Ok(()),
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, Compressor::Identity)
    }

    /// Whether `E[Q(x)] = x` holds.
    pub fn is_unbiased(&self) -> bool {
        matches!(self, Compressor::Identity | Compressor::RandK { .. } | Compressor::RandQuant { .. })
    }

    /// Draws `Q(x)`. Deterministic variants ignore `rng`.
    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<CompressedMessage> {
        compress(self, x, rng)
    }

    /// Worst-case relative variance `delta` of an unbiased variant on
    /// `dim`-dimensional inputs. For the quantizer this is the bound `p / s^2`
    /// from per-coordinate variance at most `(step / 2)^2`.
    pub fn delta(&self, dim: usize) -> Option<f64> {
        match *self {
            Compressor::Identity => Some(0.0),
            Compressor::RandK { k } => Some(dim as f64 / k as f64 - 1.0),
            Compressor::RandQuant { levels } => Some(dim as f64 / (levels as f64).powi(2)),
            _ => None,
        }
    }

    pub fn stats(&self, x: &[f64]) -> CompressorStats {
        let p = x.len() as f64;
        match *self {
            Compressor::Identity => CompressorStats { delta: Some(0.0), kappa: Some(1.0) },
            Compressor::RandK { k } => CompressorStats { delta: Some(p / k as f64 - 1.0), kappa: None },
            Compressor::RandQuant { .. } => CompressorStats { delta: None, kappa: None },
            // Both contracts can hold with equality in exact arithmetic (for
            // top_k when magnitudes tie), so kappa is rounded down by a few
            // ulps per coordinate to keep them true in floating point.
            Compressor::TopK { k } => {
                let kappa = if k as f64 >= p { 1.0 } else { (k as f64 / p - 64.0 * p * f64::EPSILON).max(0.0) };
                CompressorStats { delta: None, kappa: Some(kappa) }
            }
            Compressor::L1Sign => {
                let n2 = linalg::norm_sq(x);
                let kappa = if n2 == 0.0 {
                    1.0
                } else {
                    (linalg::norm_l1(x).powi(2) / (p * n2) - 64.0 * p * f64::EPSILON).max(0.0)
                };
                CompressorStats { delta: None, kappa: Some(kappa) }
            }
            Compressor::Sign => CompressorStats { delta: None, kappa: None },
        }
    }
}

/// Compression constants. `delta` is reported for unbiased variants with a
/// closed form; `kappa` for general compressors (input-dependent for
/// `l1_sign`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorStats {
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Dense,
    Sparse,
    Sign,
    Quantized,
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Dense(Vec<f64>),
    Sparse { indices: Vec<u32>, values: Vec<f64> },
    Sign { negative: Vec<u8>, scale: f64 },
    Quantized { lo: f64, hi: f64, levels: u32, codes: Vec<u32> },
}

/// A compressed vector as it travels on the uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    dim: usize,
    payload: Payload,
}

impl CompressedMessage {
    pub fn dense(values: Vec<f64>) -> Self {
        CompressedMessage { dim: values.len(), payload: Payload::Dense(values) }
    }

    /// Index/value pairs; indices must be strictly increasing and below `dim`.
    pub fn sparse(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::CorruptMessage("index and value counts differ".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::CorruptMessage("sparse indices not strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i as usize >= dim) {
            return Err(Error::CorruptMessage("sparse index out of range".into()));
        }
        Ok(CompressedMessage { dim, payload: Payload::Sparse { indices, values } })
    }

    /// `scale * s` where `s_i = -1` for negative entries and `+1` otherwise.
    pub fn sign(x: &[f64], scale: f64) -> Self {
        let mut negative = vec![0u8; x.len().div_ceil(8)];
        for (i, v) in x.iter().enumerate() {
            if *v < 0.0 {
                negative[i / 8] |= 1 << (i % 8);
            }
        }
        CompressedMessage { dim: x.len(), payload: Payload::Sign { negative, scale } }
    }

    /// Sign message from explicit signs (`true` = negative).
    pub fn sign_from_mask(signs_negative: &[bool], scale: f64) -> Self {
        let x: Vec<f64> = signs_negative.iter().map(|&n| if n { -1.0 } else { 1.0 }).collect();
        Self::sign(&x, scale)
    }

    pub fn quantized(dim: usize, lo: f64, hi: f64, levels: u32, codes: Vec<u32>) -> Result<Self> {
        if levels == 0 || codes.len() != dim || codes.iter().any(|&c| c > levels) {
            return Err(Error::CorruptMessage("invalid quantization codes".into()));
        }
        Ok(CompressedMessage { dim, payload: Payload::Quantized { lo, hi, levels, codes } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Dense(_) => MessageKind::Dense,
            Payload::Sparse { .. } => MessageKind::Sparse,
            Payload::Sign { .. } => MessageKind::Sign,
            Payload::Quantized { .. } => MessageKind::Quantized,
        }
    }

    /// Sparse index/value pairs, if this is a sparse message.
    pub fn sparse_entries(&self) -> Option<(&[u32], &[f64])> {
        match &self.payload {
            Payload::Sparse { indices, values } => Some((indices, values)),
            _ => None,
        }
    }

    /// Uplink payload size in bytes.
    pub fn byte_cost(&self) -> usize {
        match &self.payload {
            Payload::Dense(v) => VALUE_BYTES * v.len(),
            Payload::Sparse { indices, .. } => indices.len() * (INDEX_BYTES + VALUE_BYTES),
            Payload::Sign { .. } => self.dim.div_ceil(8) + VALUE_BYTES,
            Payload::Quantized { levels, .. } => 2 * VALUE_BYTES + (self.dim * code_bits(*levels)).div_ceil(8),
        }
    }

    pub fn decode(&self) -> ModelVector {
        let mut out = vec![0.0; self.dim];
        self.decode_into(&mut out);
        out
    }

    /// Writes the decoded vector into `out`, which must have length `dim`.
    pub fn decode_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.payload {
            Payload::Dense(v) => out.copy_from_slice(v),
            Payload::Sparse { indices, values } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (&i, &v) in indices.iter().zip(values) {
                    out[i as usize] = v;
                }
            }
            Payload::Sign { negative, scale } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let neg = negative[i / 8] >> (i % 8) & 1 == 1;
                    *o = if neg { -scale } else { *scale };
                }
            }
            Payload::Quantized { lo, hi, levels, codes } => {
                let step = (hi - lo) / *levels as f64;
                for (o, &c) in out.iter_mut().zip(codes) {
                    *o = lo + c as f64 * step;
                }
            }
        }
    }

    /// Canonical binary frame; see the module docs for the layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.byte_cost());
        let tag = match self.payload {
            Payload::Dense(_) => 0u8,
            Payload::Sparse { .. } => 1,
            Payload::Sign { .. } => 2,
            Payload::Quantized { .. } => 3,
        };
        out.push(tag);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        match &self.payload {
            Payload::Dense(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Sparse { indices, values } => {
                out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
                indices.iter().for_each(|i| out.extend_from_slice(&i.to_le_bytes()));
                values.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            Payload::Sign { negative, scale } => {
                out.extend_from_slice(negative);
                out.extend_from_slice(&scale.to_le_bytes());
            }
            Payload::Quantized { lo, hi, levels, codes } => {
                out.extend_from_slice(&levels.to_le_bytes());
                out.extend_from_slice(&lo.to_le_bytes());
                out.extend_from_slice(&hi.to_le_bytes());
                out.extend_from_slice(&pack_codes(codes, code_bits(*levels)));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let tag = r.take(1)?[0];
        let dim = r.u32()? as usize;
        let msg = match tag {
            0 => {
                let v = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                CompressedMessage::dense(v)
            }
            1 => {
                let count = r.u32()? as usize;
                if count > dim {
                    return Err(Error::CorruptMessage("more sparse entries than coordinates".into()));
                }
                let idx = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let val = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                CompressedMessage::sparse(dim, idx, val)?
            }
            2 => {
                let negative = r.take(dim.div_ceil(8))?.to_vec();
                let scale = r.f64()?;
                CompressedMessage { dim, payload: Payload::Sign { negative, scale } }
            }
            3 => {
                let levels = r.u32()?;
                if levels == 0 {
                    return Err(Error::CorruptMessage("zero quantization levels".into()));
                }
                let lo = r.f64()?;
                let hi = r.f64()?;
                let bits = code_bits(levels);
                let packed = r.take((dim * bits).div_ceil(8))?;
                let codes = unpack_codes(packed, bits, dim);
                CompressedMessage::quantized(dim, lo, hi, levels, codes)?
            }
            t => return Err(Error::CorruptMessage(format!("unknown message tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptMessage("trailing bytes after payload".into()));
        }
        Ok(msg)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptMessage("truncated message".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `ceil(log2(levels + 1))`.
pub fn code_bits(levels: u32) -> usize {
    (u32::BITS - levels.leading_zeros()) as usize
}

fn pack_codes(codes: &[u32], bits: usize) -> Vec<u8> {
    let mut out = vec![0u8; (codes.len() * bits).div_ceil(8)];
    for (i, &c) in codes.iter().enumerate() {
        for b in 0..bits {
            if c >> b & 1 == 1 {
                let pos = i * bits + b;
                out[pos / 8] |= 1 << (pos % 8);
            }
        }
    }
    out
}

fn unpack_codes(packed: &[u8], bits: usize, n: usize) -> Vec<u32> {
    (0..n)
        .map(|i| {
            (0..bits).fold(0u32, |acc, b| {
                let pos = i * bits + b;
                acc | (((packed[pos / 8] >> (pos % 8)) & 1) as u32) << b
            })
        })
        .collect()
}

/// Applies `spec` to `x`, drawing randomness from `rng`.
pub fn compress<R: Rng + ?Sized>(spec: &Compressor, x: &[f64], rng: &mut R) -> Result<CompressedMessage> {
    spec.validate(x.len())?;
    if !linalg::all_finite(x) {
        return Err(Error::NonFinite("compressor input"));
    }
    let p = x.len();
    Ok(match *spec {
        Compressor::Identity => CompressedMessage::dense(x.to_vec()),
        Compressor::RandK { k } => {
            let mut idx: Vec<u32> = rand::seq::index::sample(rng, p, k).iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            let scale = p as f64 / k as f64;
            let values = idx.iter().map(|&i| scale * x[i as usize]).collect();
            CompressedMessage::sparse(p, idx, values)?
        }
        Compressor::TopK { k } => {
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
            let mut idx: Vec<u32> = order[..k].iter().map(|&i| i as u32).collect();
            idx.sort_unstable();
            let values = idx.iter().map(|&i| x[i as usize]).collect();
            CompressedMessage::sparse(p, idx, values)?
        }
        Compressor::L1Sign => CompressedMessage::sign(x, linalg::norm_l1(x) / p as f64),
        Compressor::Sign => CompressedMessage::sign(x, 1.0),
        Compressor::RandQuant { levels } => {
            let m = linalg::norm_inf(x);
            let (lo, hi) = (-m, m);
            let codes = if m == 0.0 {
                vec![0; p]
            } else {
                let step = (hi - lo) / levels as f64;
                x.iter()
                    .map(|&r| {
                        let l = (((r - lo) / step).floor().max(0.0) as u32).min(levels - 1);
                        let a = lo + l as f64 * step;
                        let b = lo + (l + 1) as f64 * step;
                        let up = ((r - a) / (b - a)).clamp(0.0, 1.0);
                        if rng.random::<f64>() < up {
                            l + 1
                        } else {
                            l
                        }
                    })
                    .collect()
            };
            CompressedMessage::quantized(p, lo, hi, levels, codes)?
        }
    })
}

/// Exact `E||Q(x) - x||^2` of the randomized quantizer: each coordinate
/// between grid neighbours `a <= r <= b` contributes `(b - r)(r - a)`.
pub fn quantization_mse(x: &[f64], levels: u32) -> f64 {
    let m = linalg::norm_inf(x);
    if m == 0.0 {
        return 0.0;
    }
    let step = 2.0 * m / levels as f64;
    x.iter()
        .map(|&r| {
            let l = (((r + m) / step).floor().max(0.0) as u32).min(levels - 1);
            let a = -m + l as f64 * step;
            let b = -m + (l + 1) as f64 * step;
            ((b - r) * (r - a)).max(0.0)
        })
        .sum()
}

/// Monte-Carlo estimate of a compressor's bias and relative error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    /// `||mean_draws Q(x) - x|| / ||x||`.
    pub bias: f64,
    /// `mean_draws ||Q(x) - x||^2 / ||x||^2`.
    pub mse_ratio: f64,
}

pub fn measure_variance<R: Rng + ?Sized>(
    spec: &Compressor,
    x: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<VarianceEstimate> {
    if draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let n2 = linalg::norm_sq(x);
    let mut sum = vec![0.0; x.len()];
    let mut err = 0.0;
    let mut q = vec![0.0; x.len()];
    for _ in 0..draws {
        compress(spec, x, rng)?.decode_into(&mut q);
        linalg::axpy(1.0, &q, &mut sum);
        err += linalg::dist_sq(&q, x);
    }
    if n2 == 0.0 {
        return Ok(VarianceEstimate { bias: 0.0, mse_ratio: 0.0 });
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / draws as f64).collect();
    Ok(VarianceEstimate {
        bias: linalg::dist(&mean, x) / n2.sqrt(),
        mse_ratio: err / draws as f64 / n2,
    })
}

/// One error-feedback step: `u = g + e`, send `Q(u)`, keep `u - Q(u)`.
pub fn ef_step<R: Rng + ?Sized>(
    e: &[f64],
    g: &[f64],
    spec: &Compressor,
    rng: &mut R,
) -> Result<(CompressedMessage, ModelVector)> {
    check_dim(g.len(), e.len())?;
    let u = linalg::add(g, e);
    let msg = compress(spec, &u, rng)?;
    let mut new_e = msg.decode();
    for (ne, ui) in new_e.iter_mut().zip(&u) {
        *ne = ui - *ne;
    }
    Ok((msg, new_e))
}

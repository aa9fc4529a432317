//! Counter-based random streams.
//!
//! Every stochastic decision in a run draws from a ChaCha stream keyed by
//! `(run seed, owner, purpose)`. Streams never share state, so the draws a
//! worker makes for sampling are independent of how many draws its
//! compressor consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sampling = 0,
    Compression = 1,
    Attack = 2,
    Diagnostics = 3,
    Data = 4,
    Partition = 5,
}

/// Deterministic stream for `owner` (usually a worker index) and `purpose`.
pub fn stream(seed: u64, owner: u64, purpose: Purpose) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(owner.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}

//! Deterministic, stream-splittable random number generation.
//!
//! Every stochastic component takes a [`ChainRng`] derived from a master seed
//! and a stream id. ChaCha streams are independent by construction, so
//! per-athlete chains, per-sample refits and simulator draws can run
//! concurrently while the whole pipeline stays bit-reproducible: identical
//! `(seed, stream)` pairs yield identical draw sequences on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The RNG used throughout; one instance per concurrent unit of work.
pub type ChainRng = ChaCha12Rng;

/// Derive the RNG for stream `stream_id` of master seed `seed`.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Namespaces for stream ids so independent pipeline stages can never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Simulator = 1,
    Fit = 2,
    Classify = 3,
    Replicates = 4,
    Oversample = 5,
}

/// Stream id for `(domain, unit, step)`, e.g. (Classify, athlete, sample).
pub fn stream_id(domain: StreamDomain, unit: u32, step: u32) -> u64 {
    ((domain as u64) << 56) | ((unit as u64) << 24) | step as u64
}

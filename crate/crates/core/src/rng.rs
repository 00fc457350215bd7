//! Deterministic random streams.
//!
//! Everything stochastic in the harness (synthetic data, weight init, fold
//! shuffles, dropout masks) draws from ChaCha8, a counter-based generator
//! whose output is identical on every platform for a given seed and stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type DetRng = ChaCha8Rng;

/// Generator for `seed`, positioned at the start of stream 0.
pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`; used where many consumers need
/// non-overlapping randomness that does not depend on scheduling.
pub fn stream(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform(rng: &mut DetRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn normal(rng: &mut DetRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniformly shuffled `0..n`.
pub fn permutation(rng: &mut DetRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

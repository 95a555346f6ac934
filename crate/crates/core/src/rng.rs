//! Seeded, counter-addressable random streams.
//!
//! Every consumer gets a ChaCha8 stream selected by `(seed, stream)`, so a
//! value depends only on its address and never on how many values other
//! consumers drew before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[-bound, bound)`.
pub fn uniform_symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0) * bound
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

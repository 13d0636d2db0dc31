//! Named random sub-streams derived from the single run seed.
//!
//! Every consumer of randomness asks for a stream by name (and optionally an
//! index), so adding a new consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA_SHUFFLE: &str = "data-shuffle";
pub const INIT: &str = "init";
pub const NOISE: &str = "noise";
pub const ZV: &str = "zv";
pub const SAMPLER: &str = "sampler";
pub const SYNTH: &str = "synth";
pub const EVAL: &str = "eval";

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// ChaCha stream for `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    indexed_stream(seed, name, 0)
}

/// ChaCha stream for the `index`-th worker of `name` under `seed`.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}

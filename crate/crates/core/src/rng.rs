//! Seed derivation. Every random stream in a run is keyed off one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of `(base, a, b)`, used as `seed = hash(run seed, iteration, row)`.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ a) ^ b.rotate_left(32))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-streams of a root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Observed = 1,
    Init = 2,
    Train = 3,
    Simulator = 4,
    Baseline = 5,
}

pub fn stream_seed(root: u64, stream: Stream) -> u64 {
    derive_seed(root, stream as u64, 0)
}

//! Seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator seeded from
//! `derive_seed(base, stream, index)`. The mixer is the SplitMix64 finalizer,
//! so nearby `(stream, index)` pairs still give unrelated seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams. The discriminant is folded into the seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    Sampler = 2,
    DataGen = 3,
    Subsample = 4,
    BayesMonteCarlo = 5,
    SplitReset = 6,
}

/// `seed ⊕ mix64(stream, index)`; group `i` of a run uses
/// `derive_seed(seed, Stream::ModelInit, i)` for its initialization.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    seed ^ mix64(mix64(stream as u64).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

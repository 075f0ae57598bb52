//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from a master seed plus a stream label, so runs are reproducible
//! across platforms and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for `(stream, index)` from `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(master ^ mix(stream)) ^ index)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(master: u64, stream: u64, index: u64) -> Rng {
    seeded(derive_seed(master, stream, index))
}

// Stream labels.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_STOCHASTIC: u64 = 3;
pub const STREAM_BALANCE: u64 = 4;
pub const STREAM_FOLDS: u64 = 5;
pub const STREAM_SYNTH: u64 = 6;
pub const STREAM_CV: u64 = 7;
pub const STREAM_QUANT: u64 = 8;

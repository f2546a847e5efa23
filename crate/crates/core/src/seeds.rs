//! Deterministic derivation of RNG streams from a run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of stream identifiers into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

// Stream tags keep independent consumers of the same run seed decorrelated.
pub const STREAM_SCENARIO: u64 = 1;
pub const STREAM_SENSOR_EGO: u64 = 2;
pub const STREAM_SENSOR_INFRA: u64 = 3;
pub const STREAM_LATENCY: u64 = 4;
pub const STREAM_ANNOTATE: u64 = 5;

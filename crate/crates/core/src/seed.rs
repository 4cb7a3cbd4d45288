//! Deterministic seed derivation. Every random stream in the crate is a
//! `ChaCha8Rng` seeded through these functions, so a run is reproducible from
//! its base seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator family, recorded in run manifests.
pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng (seed_from_u64)";

/// The SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `base`: `mix64(mix64(base) ^ index)`.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index)
}

/// Sub-stream for one purpose within a replicate. Tags are hashed with
/// FNV-1a and mixed into the parent seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed ^ mix64(h))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Seeded random number generation.
//!
//! Every sampler takes an explicit 64-bit seed and draws from ChaCha8, so
//! results are reproducible across machines and independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of identifiers, e.g.
/// `(cell id, replication index)`. Different paths give unrelated streams.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = mix64(base ^ 0x9e37_79b9_7f4a_7c15);
    for &x in path {
        h = mix64(h.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(x)));
    }
    h
}

//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! keyed by a base seed mixed with a stream tag and indices, so independent
//! work items never share a stream and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from SplitMix64.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a stream tag, and indices.
pub fn derive_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = mix64(base);
    for b in tag.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    for &i in indices {
        h = mix64(h ^ i);
    }
    h
}

pub fn stream(base: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, indices))
}

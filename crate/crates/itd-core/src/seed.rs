//! Deterministic RNG stream derivation.
//!
//! All randomness in the crate flows from a single master seed. Independent
//! units of work (a task, a batch, a method run) derive their own stream by
//! folding a path of integers into the master seed, so parallel and serial
//! execution orders produce identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a path of stream identifiers into a derived 64-bit seed.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut acc = mix(master);
    for &p in path {
        acc = mix(acc ^ mix(p));
    }
    acc
}

/// RNG for the unit of work identified by `path` under `master`.
pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

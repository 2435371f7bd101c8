//! Deterministic seed derivation.
//!
//! Every randomized stage draws from its own ChaCha stream keyed by a master
//! seed plus a stage label (and optional indices). Adding a stage never
//! perturbs another stage's draws, and results are independent of execution
//! order across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes, mixed into the base seed with a splitmix64
/// finalizer. Stable across platforms and releases.
fn mix(mut h: u64) -> u64 {
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = base ^ 0xcbf29ce484222325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(h)
}

pub fn derive_seed_idx(base: u64, label: &str, idx: u64) -> u64 {
    mix(derive_seed(base, label) ^ idx.wrapping_mul(0x9e3779b97f4a7c15))
}

pub fn derive_seed_idx2(base: u64, label: &str, a: u64, b: u64) -> u64 {
    mix(derive_seed_idx(base, label, a) ^ b.wrapping_mul(0xd1b54a32d192ed03))
}

pub fn rng_for(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label))
}

pub fn rng_for_idx(base: u64, label: &str, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_idx(base, label, idx))
}

pub fn rng_for_idx2(base: u64, label: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_idx2(base, label, a, b))
}

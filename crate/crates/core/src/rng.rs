//! Seeded, splittable randomness. Every stochastic operation in the crate
//! takes its generator explicitly so runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashing::hash64;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for `(seed, label, index)`, e.g. one per
/// simulated client or per experiment cell.
pub fn derive(seed: u64, label: &str, index: u64) -> Rng {
    seeded(derive_seed(seed, label, index))
}

pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut key = Vec::with_capacity(label.len() + 8);
    key.extend_from_slice(label.as_bytes());
    key.extend_from_slice(&index.to_le_bytes());
    hash64(seed, &key)
}

//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a SHA-256 digest of a root seed and a list of labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Recorded in report headers so other implementations can reproduce samples.
pub const PRNG_ALGORITHM: &str = "chacha8/sha256-derive/v1";

pub fn derive_seed(seed: u64, labels: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        // length prefix keeps ["ab","c"] and ["a","bc"] apart
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn derived_rng(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}

//! Stable seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha stream whose seed is
//! a SHA-256 digest of labelled parts, so outputs stay identical across runs,
//! platforms and thread schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

/// Length-prefixed digest of `parts`, truncated to 64 bits.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), label.as_bytes()])
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one named purpose under `seed`.
pub fn sub_rng(seed: u64, label: &str) -> SeededRng {
    rng_from_seed(derive_seed(seed, label))
}

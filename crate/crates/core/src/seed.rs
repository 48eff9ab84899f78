//! Seed derivation for independent RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `seed` and a stream label.
///
/// Stages keyed by different labels draw from unrelated streams, so adding a
/// stage never perturbs the randomness of another.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Same as [`derive_seed`] with an integer label (shard ids, trial numbers).
pub fn derive_seed_indexed(seed: u64, label: &str, index: u64) -> u64 {
    derive_seed(seed, &format!("{label}/{index}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(seed: u64, label: &str) -> ChaCha8Rng {
    rng(derive_seed(seed, label))
}

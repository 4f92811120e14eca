//! Named random streams derived from one global seed.
//!
//! Every stage asks for its own substream by name, so rerunning a single stage
//! reproduces exactly the draws it made inside a full pipeline run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Derives a 64-bit seed for `name` from `seed`. Stable across platforms and
/// toolchains.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn stream(seed: u64, name: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

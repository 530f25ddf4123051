//! Named seed substreams.
//!
//! Every random component draws from its own generator whose seed is derived
//! from a root seed and a label, so adding a consumer never shifts another
//! consumer's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for substream `(label, index)` under `root`.
pub fn substream(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng(substream(root, label, index))
}

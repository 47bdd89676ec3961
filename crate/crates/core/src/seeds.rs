//! Deterministic RNG stream derivation.

use sha2::{Digest, Sha256};

/// Seed for an independent stream identified by `parts` under a global seed.
pub fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

//! Deterministic seed derivation. Every randomized stage draws from a seed
//! derived from the run seed and a purpose tag, so results do not depend on
//! scheduling or on how many other stages ran first.

use sha2::{Digest, Sha256};

/// Derive a child seed from `(seed, tag)` via SHA-256.
pub fn derive(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

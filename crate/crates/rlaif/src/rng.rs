//! Seed derivation and content hashing.
//!
//! All randomness in the pipeline flows from one global seed through
//! named derivations, so any stage can be re-run in isolation and
//! per-sample work can be parallelized without changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `(seed, component, index)`.
///
/// The derivation is a SHA-256 of the inputs, so unrelated components
/// never collide and inserting a new component leaves others untouched.
pub fn derive_seed(seed: u64, component: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0x1f]);
    h.update(component.as_bytes());
    h.update([0x1f]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Deterministic RNG for a named component.
pub fn rng_for(seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, component, index))
}

/// SHA-256 hex digest of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

/// SHA-256 hex digest of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> crate::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

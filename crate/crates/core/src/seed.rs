//! Seed derivation and configuration hashing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Derives a component seed from the master seed and a label.
///
/// `derive_seed(s, "splits")` and `derive_seed(s, "ae/nlpd")` are independent
/// streams, so one master seed reproduces every stage of a run.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Seeded generator used for all randomness in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit hash of the canonical JSON form of a configuration value.
pub fn config_hash<C: Serialize + ?Sized>(config: &C) -> u64 {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let d = Sha256::digest(&bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Hex rendering used in JSON and CSV artifacts.
pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

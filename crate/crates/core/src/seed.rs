//! Seed derivation and the RNG used everywhere randomness is needed.
//!
//! A stage seed is the first eight bytes (little endian) of
//! `sha256("<master seed>:<stage name>")`. Streams are ChaCha8, whose output is
//! fixed by the seed across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}:{stage}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

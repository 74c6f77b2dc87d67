//! Named random streams.
//!
//! Every consumer of randomness asks for a stream by name. The stream seed is
//! the SHA-256 digest of the little-endian run seed followed by the UTF-8
//! stream name, so adding a new consumer never shifts the values drawn by an
//! existing one. Sub-streams (one per sentence, per trial, ...) append
//! `/<index>` to the parent name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub fn substream(seed: u64, name: &str, index: usize) -> StreamRng {
    stream(seed, &format!("{name}/{index}"))
}

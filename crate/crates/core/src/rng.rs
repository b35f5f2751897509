//! Seeded random streams keyed by purpose, so that draws for one record or
//! category never depend on how many draws happened elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::sha256_hex;

/// Derive a 64-bit seed from a base seed and a path of string keys.
pub fn stream_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut material = seed.to_string();
    for p in parts {
        material.push('\u{1f}');
        material.push_str(p);
    }
    let hex = sha256_hex(material);
    u64::from_str_radix(&hex[..16], 16).expect("sha256 hex digest")
}

pub fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, parts))
}

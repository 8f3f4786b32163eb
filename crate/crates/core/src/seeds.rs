//! Seed derivation shared by every randomized stage.
//!
//! All stochastic components are driven by `ChaCha8Rng` instances whose seeds
//! are derived from a single run seed, so results never depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream index.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

/// Derive a child seed from a parent seed and a stage label.
pub fn derive_named(seed: u64, label: &str) -> u64 {
    derive(seed, fnv1a(label.as_bytes()))
}

/// 64-bit FNV-1a, used where a stable content hash is needed.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Root-seed derivation.
//!
//! All randomness in the pipeline flows from one root seed. Each component
//! derives its own stream seed as `splitmix64(root ^ fnv1a64(component))`,
//! so streams are independent, stable across runs, and stable across Rust
//! versions (no reliance on `std` hashers).

use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

pub fn derive_seed(root: u64, component: &str) -> u64 {
    splitmix64(root ^ fnv1a64(component.as_bytes()))
}

/// Deterministic RNG for a named component under a root seed.
pub fn component_rng(root: u64, component: &str) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(root, component))
}

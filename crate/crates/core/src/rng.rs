//! Seed derivation and the deterministic RNG used throughout the crate.
//!
//! A single master seed fans out to per-stage seeds via a labeled hash, so the
//! whole pipeline is reproducible from one number and stages can be re-run (or
//! resumed) independently without replaying RNG streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a stage seed from `(master, label, index)`.
///
/// FNV-1a over the label folded into a splitmix64 chain; stable across
/// platforms and releases of this crate.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = master ^ h;
    x = splitmix64(x);
    x ^= index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The crate's deterministic RNG, always seeded explicitly.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Deterministic RNG streams.
//!
//! One 64-bit root seed is split into named substreams so that changing the
//! seed of one part of an experiment (e.g. minibatch order) never perturbs
//! another (e.g. latent samples). Link weights additionally use a pair-keyed
//! stream so that `w(i, j)` is a single consistent draw no matter when or how
//! often it is queried.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a, stable across platforms.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed of the named substream of `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(hash_name(name)))
}

/// RNG for the named substream of `root`.
pub fn stream_rng(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name))
}

/// RNG keyed by an unordered node pair; symmetric in `(i, j)`.
pub fn pair_rng(link_seed: u64, i: usize, j: usize) -> ChaCha8Rng {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let mixed = splitmix64(link_seed ^ splitmix64(lo as u64) ^ splitmix64((hi as u64) << 1));
    ChaCha8Rng::seed_from_u64(mixed)
}

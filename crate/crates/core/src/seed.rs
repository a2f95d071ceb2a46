//! Deterministic seed splitting.
//!
//! Every randomized stage draws from a sub-seed computed as
//! `splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))`. The tags in use are
//! `"init"`, `"split"`, `"balance"`, `"shuffle"`, `"dropout"` and
//! `"synthetic"`; the index distinguishes epochs, batches, classes or layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derive a child seed from a root seed, a stage tag and an index.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `0..n` in a seeded random order.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng(seed));
    v
}

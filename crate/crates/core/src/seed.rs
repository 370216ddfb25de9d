//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! pure function of a master seed and a path of stream tags (row index, fold,
//! phase, ...). Results therefore never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a list of stream tags.
pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(parent), |acc, &t| mix(acc ^ mix(t)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags, kept distinct so that no two purposes share a stream.
pub(crate) const TAG_BENIGN: u64 = 0x6265_6e69;
pub(crate) const TAG_ANOMALOUS: u64 = 0x616e_6f6d;
pub(crate) const TAG_NOISE_TRAIN: u64 = 0x6e74_726e;
pub(crate) const TAG_NOISE_TEST: u64 = 0x6e74_7374;
pub(crate) const TAG_FOLDS: u64 = 0x666f_6c64;
pub(crate) const TAG_NOISE: u64 = 0x6e6f_6973;
pub(crate) const TAG_VALIDATION: u64 = 0x7661_6c69;

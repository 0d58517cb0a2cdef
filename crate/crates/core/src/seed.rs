//! Seed derivation. Every random stream in the pipeline is a ChaCha8
//! generator keyed by a seed derived from the run seed and a path of
//! integers, so per-sample generation order never affects results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `base`; distinct paths give decorrelated seeds.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, path))
}

// Stream tags so unrelated consumers never share a path prefix.
pub(crate) const STREAM_CLASSES: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;
pub(crate) const STREAM_TEST: u64 = 3;
pub(crate) const STREAM_AUGMENT: u64 = 4;
pub(crate) const STREAM_BACKBONE: u64 = 5;
pub(crate) const STREAM_HEAD: u64 = 6;

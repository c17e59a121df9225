//! Seed derivation and Gaussian sampling.
//!
//! Every random stream in the crate is a `ChaCha8Rng` keyed by a seed derived
//! from a base seed and a list of stream tags (node id, round, run index...).
//! Derivation runs the tags through splitmix64 so that distinct tag tuples
//! never alias the way a plain XOR would (`s ^ 1 ^ 0 == s ^ 0 ^ 1`).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, one splitmix round per tag.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// `rows x cols` matrix of i.i.d. standard normals, filled column-major.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_iterator(
        rows,
        cols,
        StandardNormal.sample_iter(&mut *rng).take(rows * cols),
    )
}

// Stream tags, kept distinct so no two subsystems share a stream.
pub(crate) const TAG_INIT: u64 = 0x1001;
pub(crate) const TAG_REPLACE: u64 = 0x1004;
pub(crate) const TAG_SCHEDULE: u64 = 0x1005;
pub(crate) const TAG_RUN: u64 = 0x1006;
pub(crate) const TAG_DATA: u64 = 0x1007;
pub(crate) const TAG_MODEL: u64 = 0x1008;

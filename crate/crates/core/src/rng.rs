//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`seeded`], which builds a
//! ChaCha8 stream cipher generator from a 64-bit seed (`rand_chacha`'s
//! `seed_from_u64`, which expands the seed with PCG32). ChaCha8 output is
//! specified bit-for-bit and platform independent, so traces reproduce
//! across machines. Normal variates use `rand_distr::StandardNormal`
//! (ziggurat).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Mat;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. N(0, 1) entries, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer), so derived
/// seeds for ground truth, ensemble and noise never collide for one base.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

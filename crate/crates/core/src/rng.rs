//! Seeded random streams.
//!
//! Every run draws from a ChaCha8 generator keyed by the master seed and the
//! run key, with one ChaCha stream per phase. ChaCha8 output is specified
//! bit-for-bit, so runs reproduce across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a key.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    mix64(seed ^ mix64(key))
}

/// Generator for one `(seed, stream)` pair.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on `[-half_width, half_width)`. Always consumes one value.
pub fn symmetric_uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    half_width * (2.0 * u - 1.0)
}

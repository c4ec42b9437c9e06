//! Seed derivation and counter-keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! `(seed, stream)` pair, so any value can be regenerated without storing it
//! and parallel schedules never change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named sub-streams derived from one master seed.
pub mod stream {
    pub const WORLD: &str = "world";
    pub const KMEANS: &str = "kmeans";
    pub const SAMPLING: &str = "sampling";
    pub const AUGMENT: &str = "augment";
    pub const SURROGATE: &str = "surrogate";
    pub const REFINE: &str = "refine";
    pub const RANDOM_CENTERS: &str = "random-centers";
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for sub-stream `name`, instance `index`.
pub fn derive(master: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name keeps the mapping stable across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(splitmix64(index)))
}

/// ChaCha generator positioned at stream `stream` of key `seed`.
pub fn rng_at(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

//! Deterministic random streams.
//!
//! Stream `i` of a run is a ChaCha8 generator seeded from the master seed with
//! its stream counter set to `i`. Distinct replicate ids therefore never share
//! keystream, and any replicate can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, replicate_id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_id);
    rng
}

/// Derives an auxiliary seed for a named purpose (centering paths, probe
/// directions, ...) so auxiliary draws never collide with replicate streams.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut Stream, out: &mut [f64]) {
    for v in out {
        *v = normal(rng);
    }
}

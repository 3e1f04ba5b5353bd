//! Seeded random streams.
//!
//! Every stochastic operation draws from a ChaCha stream selected by
//! `(seed, module, purpose, worker)`. Work is split into fixed-size chunks
//! and chunk `k` always uses worker index `k`, so results do not depend on
//! how many threads actually run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Number of runs or points handled by one worker stream.
pub const CHUNK: usize = 512;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(module, purpose, worker)` under `seed`.
pub fn stream(seed: u64, module: &str, purpose: &str, worker: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = fnv1a(purpose.as_bytes(), fnv1a(module.as_bytes(), 0xcbf2_9ce4_8422_2325));
    rng.set_stream(splitmix(tag ^ splitmix(worker)));
    rng
}

/// Uniform draw from the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Chunk boundaries `[(worker, start, len)]` covering `0..n`.
pub fn chunks(n: usize) -> Vec<(u64, usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|k| {
            let start = k * CHUNK;
            (k as u64, start, CHUNK.min(n - start))
        })
        .collect()
}

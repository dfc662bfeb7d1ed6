//! Deterministic derivation of independent random streams from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Purpose tags keep streams used for different things apart.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    GeneratorInit = 1,
    DiscriminatorInit = 2,
    DiscriminatorBatch = 3,
    GeneratorBatch = 4,
    DiscriminatorDropout = 5,
    GeneratorDropout = 6,
}

/// RNG for `(seed, stream, index, sub)`; identical inputs give identical streams.
pub fn rng_for(seed: u64, stream: Stream, index: u64, sub: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    h = splitmix(h ^ stream as u64);
    h = splitmix(h ^ index);
    h = splitmix(h ^ sub.wrapping_mul(0x2545_f491_4f6c_dd1d));
    ChaCha8Rng::seed_from_u64(h)
}

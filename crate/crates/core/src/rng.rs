//! Deterministic rng streams derived from a base seed and integer tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, tags...)`; equal inputs give equal streams.
pub fn derive(seed: u64, tags: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

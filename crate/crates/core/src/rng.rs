//! Seeded random streams.
//!
//! Every work unit (trajectory, path, run) gets its own ChaCha8 stream keyed
//! by `(seed, index)`, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed; used to give sub-experiments independent seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag.wrapping_mul(GOLDEN))
}

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    rng.set_stream(index);
    rng
}

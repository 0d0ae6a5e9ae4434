//! Seeded sub-streams, one per (entity, purpose), so that drawing for one
//! task never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PURPOSE_EXEC: u64 = 1;
pub const PURPOSE_TRANSFER: u64 = 2;
pub const PURPOSE_SCENARIO: u64 = 3;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `(seed, purpose, a, b)`.
pub fn substream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix(purpose ^ splitmix(a ^ splitmix(b))));
    rng
}

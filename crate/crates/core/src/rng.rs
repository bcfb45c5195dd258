//! Counter-based random streams: one independent ChaCha stream per
//! `(seed, index)` so that chunked work reproduces bit-for-bit regardless of
//! how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

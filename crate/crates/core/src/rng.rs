//! Counter-based random streams: every replication draws from its own
//! ChaCha stream keyed by `(seed, index)`, so results do not depend on how
//! replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

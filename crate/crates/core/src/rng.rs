//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64`. Independent consumers inside one run use
//! separate ChaCha streams of the same seed, so adding draws to one consumer
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used for dataset generation.
pub const STREAM_DATASET: u64 = 0;
/// Stream used for minibatch sampling.
pub const STREAM_SAMPLING: u64 = 1;
/// Stream used for exploration noise in online training.
pub const STREAM_EXPLORATION: u64 = 2;
/// Stream used to pick priority-refresh subsets.
pub const STREAM_REFRESH: u64 = 3;

pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Seeded random streams. Every subsystem draws from its own ChaCha stream so
//! toggling one (say, dropout) never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Dropout = 3,
    Noise = 4,
    Shots = 5,
    Split = 6,
    EvalNoise = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Independent stream per work item (for example one per scored triple), so
/// results do not depend on how items are scheduled across threads.
pub fn substream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64 | ((index + 1) << 8));
    rng
}

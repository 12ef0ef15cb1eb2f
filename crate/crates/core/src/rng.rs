//! Seeded random streams.
//!
//! Every stochastic operation takes a [`ChaCha8Rng`]. Long-running loops derive
//! one independent stream per (purpose, index) pair so that any step can be
//! replayed without replaying its predecessors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream tags; distinct tags never share a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Corpus = 4,
    Eval = 5,
    Cluster = 6,
    GradCheck = 7,
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 56) ^ (index & 0x00ff_ffff_ffff_ffff));
    rng
}

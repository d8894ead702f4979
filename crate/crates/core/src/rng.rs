//! Seeded random streams.
//!
//! Every run derives independent ChaCha streams from one seed, one per
//! purpose, so that changing how one purpose consumes randomness (e.g.
//! drawing per-cell retention constants) leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    ReadNoise = 2,
    UpdatePulses = 3,
    TauVariation = 4,
    Subset = 5,
}

pub fn stream(seed: u64, which: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Stream for one layer of a multi-layer purpose.
pub fn layer_stream(seed: u64, which: Stream, layer: usize) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(which as u64);
    rng
}

//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha8 stream, selected by a purpose
//! tag and an index, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Noise = 3,
    Eval = 4,
    Corpus = 5,
    Degrade = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | index);
    rng
}

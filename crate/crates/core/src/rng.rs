//! Named random streams forked from one integer seed.
//!
//! Each stream is a ChaCha8 generator keyed by the seed and running on its own
//! stream id, so drawing from one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    LabelledOrder = 2,
    UnlabelledOrder = 3,
    Mask = 4,
    Dataset = 5,
    Split = 6,
}

impl Stream {
    pub fn rng(self, seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self as u64);
        rng
    }
}

//! Counter-keyed random streams.
//!
//! Every sample draws its randomness from a ChaCha8 generator whose seed is
//! derived from the master seed and whose stream id encodes `(level, index)`.
//! The generator state is therefore a pure function of the key, so samples can
//! be evaluated in any order, on any number of workers, and still reproduce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const INDEX_BITS: u32 = 48;
const MAX_LEVEL: usize = (1 << (64 - INDEX_BITS)) - 1;

/// Key identifying the random stream of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub level: usize,
    pub index: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64, level: usize, index: u64) -> Self {
        assert!(level <= MAX_LEVEL, "level {level} exceeds stream key space");
        assert!(index < (1 << INDEX_BITS), "index {index} exceeds stream key space");
        Self {
            master_seed,
            level,
            index,
        }
    }

    fn stream_id(&self) -> u64 {
        ((self.level as u64) << INDEX_BITS) | self.index
    }

    /// Fresh generator positioned at the start of this key's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id());
        rng.set_word_pos(0);
        rng
    }
}

//! Named sub-streams derived from a single user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams carved out of one seed, so that e.g. weight
/// initialization can be reproduced without replaying data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubSeed {
    Generation,
    Init,
    Shuffle,
}

impl SubSeed {
    fn stream_id(self) -> u64 {
        match self {
            SubSeed::Generation => 1,
            SubSeed::Init => 2,
            SubSeed::Shuffle => 3,
        }
    }
}

pub fn stream_rng(seed: u64, sub: SubSeed) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sub.stream_id());
    rng
}

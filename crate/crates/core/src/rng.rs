//! Seed-derived random streams. Every concurrent unit (replication, chain,
//! sweep) gets its own ChaCha stream so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SepRng = ChaCha8Rng;

/// Independent stream `stream` under the master `seed`.
pub fn stream(seed: u64, stream: u64) -> SepRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream identifiers for the different consumers of randomness.
pub mod tags {
    pub const EPMC_PIXELS: u64 = 1 << 32;
    pub const EPMC_HYPER: u64 = 2 << 32;
    pub const EPMCMC_REPLICATION: u64 = 3 << 32;
    pub const BASELINE: u64 = 4 << 32;
    pub const PHANTOM_NOISE: u64 = 5 << 32;
    pub const CLUTTER_DATA: u64 = 6 << 32;
    pub const CLUTTER_MC: u64 = 7 << 32;
    pub const NORMALIZER: u64 = 8 << 32;
}

//! Deterministic random substreams.
//!
//! Every random quantity is drawn from a stream keyed by `(seed, domain,
//! index)`, so results never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub mod domain {
    pub const FAST_WEIGHTS: u64 = 1;
    pub const SLOW_SAMPLE: u64 = 2;
    pub const CALIBRATION: u64 = 3;
    pub const PROJECTIONS: u64 = 4;
    pub const SIMULATION: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const MONTE_CARLO: u64 = 7;
    pub const RANK: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}

/// Derive a child seed, for handing a seed to a nested procedure.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(domain)) ^ splitmix(index.wrapping_add(0x5151)))
}

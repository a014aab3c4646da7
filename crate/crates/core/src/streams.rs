//! Named random substreams. Every random draw in the crate comes from one
//! user seed split into independent ChaCha streams, so changing how one stage
//! consumes randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PlanInit = 1,
    Selection = 2,
    DataGen = 3,
    Pilot = 4,
    Calibration = 5,
}

/// Generator for `stream` under `seed`; `lane` separates parallel consumers
/// of the same stream (for example one selection draw per scheme).
pub fn substream(seed: u64, stream: Stream, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | lane);
    rng
}

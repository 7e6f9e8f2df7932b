//! Seed-stream derivation so each subsystem owns an independent,
//! reproducible RNG regardless of call interleaving.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of the master seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Buildings = 1,
    Traces = 2,
    Deployment = 3,
    Reservoir = 4,
    CgNetInit = 5,
    CgNetBatch = 6,
    FadingRealized = 7,
    FadingMeasure = 8,
    PretrainGeometry = 9,
    RateClasses = 10,
}

/// splitmix64 finalizer; decorrelates tagged sub-seeds of one master seed.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sub_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix(master ^ splitmix((stream as u64) << 32 | index))
}

pub fn sub_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, stream, index))
}

//! Reproducible random streams.
//!
//! Every Monte Carlo iteration owns a 64-bit key derived from the scenario's base seed and the
//! iteration index. Each noise source then reads from its own ChaCha8 stream under that key
//! (`set_stream`), so draws from one source never shift another and results do not depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent noise sources within one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TagPerturbation = 1,
    InputNoise = 2,
    PixelNoise = 3,
    InitialState = 4,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of iteration `index` under `base_seed`.
pub fn iteration_seed(base_seed: u64, index: u64) -> u64 {
    mix(mix(base_seed) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

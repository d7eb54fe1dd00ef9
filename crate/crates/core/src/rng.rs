//! Deterministic random streams.
//!
//! A single experiment seed fans out into independent ChaCha streams, one per
//! component and index, so results do not depend on scheduling order when work
//! is spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream labels for the different consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Curve = 1,
    Init = 2,
    Inputs = 3,
    Teacher = 4,
    Noise = 5,
    Shuffle = 6,
    Synthesis = 7,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Random generator for `(seed, stream, index path)`.
pub fn stream_rng(seed: u64, stream: Stream, path: &[u64]) -> SimRng {
    let mut id = splitmix(stream as u64);
    for &p in path {
        id = splitmix(id ^ p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

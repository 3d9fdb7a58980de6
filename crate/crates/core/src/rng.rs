//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own stream derived from the run seed
//! plus a purpose tag and indices. Nothing carries mutable generator state across
//! iterations, so a run can be resumed from the iteration counter alone and
//! parallel rollouts draw from disjoint streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

/// Purpose tags separating the stream families of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Questions = 2,
    Rollout = 3,
    Minibatch = 4,
    EvalQuestions = 5,
    EvalSamples = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the seed, purpose and indices into a single 64-bit stream key.
pub fn stream_key(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    h = splitmix64(h ^ purpose as u64);
    for &i in indices {
        h = splitmix64(h ^ i);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> RngStream {
    ChaCha8Rng::seed_from_u64(stream_key(seed, purpose, indices))
}

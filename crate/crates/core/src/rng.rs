//! Seed splitting.
//!
//! Every random stream is derived from one 64-bit run seed by folding a path of
//! labels through SplitMix64: `derive(seed, &[EPOCH, e, REPLICA, i])`. Streams for
//! distinct paths are independent for practical purposes, and a replica's stream
//! never depends on how replicas are partitioned across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub const INIT: u64 = 0x1;
pub const RESET: u64 = 0x2;
pub const ACTION: u64 = 0x3;
pub const EPOCH: u64 = 0x4;
pub const REPLICA: u64 = 0x5;
pub const SHUFFLE: u64 = 0x6;
pub const GOAL: u64 = 0x7;
pub const EVAL: u64 = 0x8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is seeded by hashing the master seed
//! together with a path of integers (stream tag, replica, layer, ...). Streams
//! therefore never depend on how many draws another stream made, which keeps
//! layer prefixes and replicas reproducible in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA_TRAIN: u64 = 1;
pub const STREAM_DATA_TEST: u64 = 2;
pub const STREAM_DATA_NOISE: u64 = 3;
pub const STREAM_LAYER: u64 = 4;
pub const STREAM_FREQ_Z: u64 = 5;
pub const STREAM_INIT: u64 = 6;
pub const STREAM_BATCH: u64 = 7;
pub const STREAM_REPLICA: u64 = 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

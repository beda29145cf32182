//! Sub-seed derivation.
//!
//! Every stochastic stage of a run draws from its own ChaCha8 stream. The
//! stream seed is `derive(master, path)`, where `path` is a short list of
//! integers naming the stage (a purpose tag followed by indices such as the
//! round and client id). Derivation folds each path element into a
//! SplitMix64 state, so it is stable across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 1;
pub const PARTITION: u64 = 2;
pub const INIT: u64 = 3;
pub const TRAIN: u64 = 4;
pub const PROFILE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed and a stage path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// RNG for the stage named by `path`.
pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_distinct_and_stable() {
        assert_eq!(derive(1, &[TRAIN, 0, 1]), derive(1, &[TRAIN, 0, 1]));
        assert_ne!(derive(1, &[TRAIN, 0, 1]), derive(1, &[TRAIN, 1, 0]));
        assert_ne!(derive(1, &[DATA]), derive(2, &[DATA]));
        assert_ne!(derive(1, &[DATA]), derive(1, &[INIT]));
    }
}

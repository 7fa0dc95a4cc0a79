//! Replicate seed derivation.
//!
//! Replicate `i` of a run with base seed `b` always uses
//! `derive_seed(b, i)`, regardless of how many worker threads execute the
//! replicates. The derivation is a single SplitMix64 step applied to
//! `b + (i+1) * GOLDEN_GAMMA`, which decorrelates consecutive replicate
//! seeds while staying a pure function of `(b, i)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (Steele, Lea & Flood 2014).
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `index` of a run with the given base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add((index.wrapping_add(1)).wrapping_mul(GOLDEN_GAMMA)))
}

/// The RNG used by every simulator in this crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: the derivation is part of the reproducibility
        // contract, so any change here is a breaking change.
        assert_eq!(derive_seed(0, 0), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(derive_seed(42, 0), 0x28ef_e333_b266_f103);
        assert_eq!(derive_seed(42, 1), 0x4752_6757_130f_9f52);
    }

    #[test]
    fn distinct_replicates_get_distinct_seeds() {
        let base = 1234567;
        let seeds: Vec<u64> = (0..64).map(|i| derive_seed(base, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }
}

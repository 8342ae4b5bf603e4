//! Deterministic random-stream derivation.
//!
//! Every stochastic component takes an explicitly passed stream; nothing in
//! the crate draws from ambient randomness. Streams are `ChaCha8` generators
//! keyed by a SplitMix64 hash chain over `(master seed, domain tags)`, so a
//! trial's stream is a pure function of the master seed and its coordinates
//! (hypothesis, alternative index, trial index), independent of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer. Well-distributed for counter-based seeding.
#[inline]
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a sequence of domain tags.
///
/// Chaining SplitMix64 over the tags keeps distinct tag tuples on distinct,
/// decorrelated streams.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// A `ChaCha8` stream keyed by `(master, tags)`.
pub fn stream(master: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Domain tags for the standard stream split inside one trial.
pub mod tag {
    /// Null-hypothesis trials.
    pub const NULL: u64 = 0;
    /// Alternative-hypothesis trials.
    pub const ALT: u64 = 1;
    /// Strategy-internal randomization (e.g. the coordinate subsample).
    pub const STRATEGY: u64 = 2;
    /// Observation noise consumed by `sample_round`.
    pub const OBSERVATION: u64 = 3;
    /// Detector calibration (null quantiles, likelihood-ratio medians).
    pub const CALIBRATION: u64 = 4;
    /// Sampling of alternatives for worst-case evaluation.
    pub const ALTERNATIVES: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derive_seed_is_stable_and_tag_sensitive() {
        let a = derive_seed(7, &[1, 2, 3]);
        let b = derive_seed(7, &[1, 2, 3]);
        let c = derive_seed(7, &[1, 3, 2]);
        let d = derive_seed(8, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn streams_reproduce() {
        let mut s1 = stream(42, &[tag::NULL, 0, 17]);
        let mut s2 = stream(42, &[tag::NULL, 0, 17]);
        for _ in 0..16 {
            assert_eq!(s1.next_u64(), s2.next_u64());
        }
    }
}

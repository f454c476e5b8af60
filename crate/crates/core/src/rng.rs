//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `seed`. Independent chains draw
//! from independent streams of the same ChaCha8 key:
//!
//! ```text
//! stream(seed, chain) = ChaCha8Rng::seed_from_u64(seed) with set_stream(chain)
//! ```
//!
//! Auxiliary consumers that must not collide with chain streams (channel noise,
//! the operator-parameter branch of blind decoding, ...) xor a fixed tag into the
//! seed before splitting. Because each chain owns its stream, results do not
//! depend on how chains are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type ChainRng = ChaCha8Rng;

/// Tag mixed into seeds for measurement noise draws.
pub const NOISE_TAG: u64 = 0x6e6f_6973_6500_0001;
/// Tag mixed into seeds for the operator-parameter sampler in blind decoding.
pub const OPERATOR_TAG: u64 = 0x6f70_6572_0000_0002;
/// Tag mixed into seeds for channel-state draws.
pub const CHANNEL_TAG: u64 = 0x6368_616e_0000_0003;
/// Tag mixed into seeds for reference (oracle) draws in experiments.
pub const REFERENCE_TAG: u64 = 0x7265_6600_0000_0004;

pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

pub fn tagged_rng(seed: u64, tag: u64, chain: u64) -> ChainRng {
    chain_rng(seed ^ tag, chain)
}

/// Seed of the `k`-th sub-experiment under `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| std_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = normal_vec(&mut chain_rng(7, 0), 8);
        let b: Vec<f64> = normal_vec(&mut chain_rng(7, 0), 8);
        let c: Vec<f64> = normal_vec(&mut chain_rng(7, 1), 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

//! Deterministic derivation of independent random streams.
//!
//! Every stochastic choice in a run (data order, crop boxes, augmentation
//! draws, initialization) comes from a stream keyed by the run seed plus a
//! tuple of tags, so nothing depends on call order or hidden RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// FNV-1a, used to turn sample ids into stream tags.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream tags, kept distinct so that e.g. crop draws never alias init draws.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const EPOCH_ORDER: u64 = 2;
    pub const VIEWS: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const CROP_TEST: u64 = 6;
    pub const SUBSAMPLE: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
    pub const SPLIT: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_tag_sensitive() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

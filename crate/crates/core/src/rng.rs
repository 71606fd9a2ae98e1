//! Deterministic RNG substreams.
//!
//! Every random decision in the crate draws from a ChaCha stream keyed by the
//! global seed plus a path of tags (module, sweep, row, ...). Work items can
//! then run on any thread and still produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Returns an independent stream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable numeric tags for the substream paths used across the crate.
pub mod tag {
    pub const TRIM: u64 = 1;
    pub const ZEROS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const HYPER: u64 = 4;
    pub const ROWS: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const PD_SUBSET: u64 = 7;
    pub const RECON: u64 = 8;
    pub const DEMO: u64 = 9;
    pub const BASELINE: u64 = 10;
    pub const SGD: u64 = 11;
    pub const RETRY: u64 = 12;
    pub const KAPPA: u64 = 13;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, &[1, 2]).random();
        let b: u64 = substream(7, &[1, 2]).random();
        let c: u64 = substream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

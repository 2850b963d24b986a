//! Deterministic counter-based random streams.
//!
//! All stochastic code in this crate takes an explicit RNG. Streams are
//! derived from a root seed plus a list of integer tags (purpose, episode,
//! trajectory index, ...), so independent substreams can be opened in any
//! order without consuming each other's state. This is what makes Monte
//! Carlo batches, paired experiment arms, and episode-granular resume
//! reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream purposes used by the harness. Kept in one place so that paired
/// experiment arms can deliberately share (or not share) streams.
pub mod purpose {
    pub const ENV_NOISE: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const INIT_STATE: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const MONTE_CARLO: u64 = 5;
    pub const CONTROLLER: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed and tags into a single 64-bit value.
fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed ^ 0xa076_1d64_78bd_642f);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// Open the substream identified by `tags` under `seed`.
///
/// Streams with distinct tag lists are statistically independent; the same
/// `(seed, tags)` always yields a bit-identical stream.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mixed = mix(seed, tags);
    let mut rng = ChaCha12Rng::seed_from_u64(mixed);
    rng.set_stream(splitmix64(mixed ^ 0x6c62_272e_07bb_0142));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible() {
        let mut a = substream(7, &[purpose::ENV_NOISE, 3]);
        let mut b = substream(7, &[purpose::ENV_NOISE, 3]);
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let mut a = substream(7, &[purpose::ENV_NOISE, 3]);
        let mut b = substream(7, &[purpose::ENV_NOISE, 4]);
        let mut c = substream(7, &[purpose::POLICY, 3]);
        let va: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.random()).collect();
        let vc: Vec<u64> = (0..8).map(|_| c.random()).collect();
        assert_ne!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn order_of_opening_does_not_matter() {
        let mut early = substream(11, &[purpose::MONTE_CARLO, 0]);
        let first: u64 = early.random();
        // Open and consume a different stream in between.
        let mut other = substream(11, &[purpose::MONTE_CARLO, 1]);
        let _: u64 = other.random();
        let mut again = substream(11, &[purpose::MONTE_CARLO, 0]);
        assert_eq!(first, again.random::<u64>());
    }
}

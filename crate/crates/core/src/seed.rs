//! Seed splitting.
//!
//! Every random stream in the pipeline is derived from the experiment's master seed
//! with [`derive_seed`], so parallel work is order-independent. The rule is:
//!
//! 1. FNV-1a (64-bit) over `master.to_le_bytes() ++ stage.as_bytes() ++ [0xff] ++ index.to_le_bytes()`
//! 2. the SplitMix64 finalizer applied to that hash.
//!
//! Streams are ChaCha8 generators seeded with `seed_from_u64(derived)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for `(master, stage, index)`.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    let bytes = master
        .to_le_bytes()
        .into_iter()
        .chain(stage.bytes())
        .chain(std::iter::once(0xff))
        .chain(index.to_le_bytes());
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// A deterministic generator for an already-derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng(derive_seed(master, stage, index))`.
pub fn stream(master: u64, stage: &str, index: u64) -> ChaCha8Rng {
    rng(derive_seed(master, stage, index))
}

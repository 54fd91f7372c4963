//! Seed derivation.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by a 64-bit
//! value derived from the master seed and a textual tag. The derivation is
//! FNV-1a over the little-endian seed bytes followed by the tag bytes, then a
//! SplitMix64 finalizer. The scheme is fixed so that results are stable
//! across platforms and compiler versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an ordered list of tag parts.
pub fn derive(seed: u64, parts: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    for part in parts {
        // separator keeps ("ab","c") distinct from ("a","bc")
        h = fnv1a(h, part.as_bytes());
        h = fnv1a(h, &[0xff]);
    }
    splitmix(h)
}

/// Child seed for integer-indexed substreams (trials, probes).
pub fn derive_index(seed: u64, tag: &str, index: u64) -> u64 {
    derive(seed, &[tag, &index.to_string()])
}

/// A generator for the named substream of `seed`.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, &[tag]))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Fixed, portable hash functions shared by every stage.
//!
//! Everything that must be reproducible across runs, machines and worker
//! counts hashes through this module: shingle hashing, the MinHash family,
//! LSH band digests, seed derivation and exact-dedup content digests.

use xxhash_rust::xxh3::{xxh3_128, xxh3_64};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain-separation constants for the keyed mix.
pub(crate) const DOMAIN_MINHASH: u64 = 0x6d69_6e68_6173_6801;
pub(crate) const DOMAIN_BAND: u64 = 0x6c73_6862_616e_6402;
pub(crate) const DOMAIN_STAGE: u64 = 0x7374_6167_6573_6403;
pub(crate) const DOMAIN_ANCHOR: u64 = 0x616e_6368_6f72_7304;
pub(crate) const DOMAIN_EMBED: u64 = 0x656d_6265_6464_6505;

/// SplitMix64 finalizer. A bijection on `u64` with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the key of the `index`-th member of a keyed family.
#[inline]
pub fn family_key(seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ domain).wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Keyed 64-bit mix of `value` under `key`.
#[inline]
pub fn keyed(value: u64, key: u64) -> u64 {
    mix64(mix64(value ^ key).wrapping_add(key))
}

/// Stable 64-bit hash of a string (XXH3-64, seed 0).
#[inline]
pub fn hash_str(s: &str) -> u64 {
    xxh3_64(s.as_bytes())
}

/// 128-bit content digest over raw bytes (XXH3-128, seed 0).
#[inline]
pub fn content_digest(bytes: &[u8]) -> u128 {
    xxh3_128(bytes)
}

/// Derives a per-stage seed from the global seed and a stage label.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    keyed(hash_str(label), family_key(global, DOMAIN_STAGE, 0))
}

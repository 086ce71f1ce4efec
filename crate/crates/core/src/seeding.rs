//! Derivation of independent RNG seeds from structured keys.

/// SplitMix64 finalizer.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the stream identified by `parts`, e.g. `(seed, epoch, node)`.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51ed_270b_2a3f_6c1du64, |acc, &p| mix(acc ^ mix(p)))
}

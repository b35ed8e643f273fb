/// splitmix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in `[0, 1)` keyed by `(seed, node, step, index)`.
pub fn unit_hash(seed: u64, node: u64, step: u64, index: u64) -> f64 {
    let h = mix64(mix64(mix64(mix64(seed) ^ node) ^ step) ^ index);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

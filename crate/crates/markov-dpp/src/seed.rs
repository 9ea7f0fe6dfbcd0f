//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one master seed. Components receive
//! child seeds derived as `splitmix64(master ^ fnv1a(tag))`, so adding a new
//! component never perturbs the streams of existing ones and the scheme is
//! stable across platforms and releases (no `std` hasher involved).

/// FNV-1a over the tag bytes.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One round of the splitmix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the child seed for a named component.
pub fn child_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}

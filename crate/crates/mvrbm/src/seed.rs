//! Deterministic seed derivation.
//!
//! A single master seed drives every stage of a pipeline. Stage seeds are derived
//! by hashing the master seed together with a stage label through splitmix64, so
//! adding or reordering stages never perturbs the streams of unrelated stages.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stage seed from a master seed and a stage label
/// (FNV-1a over the label bytes, splitmix64 finalized).
pub fn derive(master: u64, label: &str) -> u64 {
    let mut state = master ^ 0xcbf2_9ce4_8422_2325;
    for &byte in label.as_bytes() {
        state ^= u64::from(byte);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(state)
}

/// Derive a per-item seed, e.g. one generator per (epoch, row).
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    mix(derive(master, label) ^ index.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

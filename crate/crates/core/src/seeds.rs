//! Deterministic seed derivation for parallel tasks.
//!
//! Every parallel worker (bootstrap resample, sweep point, repetition)
//! derives its RNG seed as `derive_seed(root, index)`. The derivation is
//! a fixed splitmix64 chain, so results are independent of thread
//! scheduling and stable across platforms and releases.

/// One splitmix64 step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for task `index` under root seed `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

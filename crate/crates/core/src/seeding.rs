//! Deterministic seed derivation for independent RNG streams.
//!
//! All randomized stages (exemplar selection, batch shuffling, model init,
//! per-run streams) draw from streams derived here, so a single base seed
//! reproduces an entire run.

/// splitmix64 step; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `base` and a stream identifier.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Stream identifiers used by the trainer and benchmark driver.
pub mod stream {
    pub const MODEL_INIT: u64 = 0x01;
    pub const EXEMPLARS: u64 = 0x02;
    pub const PLAN: u64 = 0x03;
    pub const CLUSTER: u64 = 0x04;
    pub const EVAL_SPLIT: u64 = 0x05;
}

/// Per-epoch variant: mixes an epoch counter into a stream.
pub fn derive_epoch(base: u64, stream: u64, epoch: usize) -> u64 {
    derive(base, stream ^ ((epoch as u64) << 8))
}

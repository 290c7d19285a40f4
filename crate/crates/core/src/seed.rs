//! Seed expansion: every stage of a command draws from
//! `seed.wrapping_add(fnv1a64(stage_name))`, so sub-stages can be reproduced
//! individually from the single command seed.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a stage name.
pub fn fnv1a64(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    seed.wrapping_add(fnv1a64(stage))
}

//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`Rng`], a xoshiro256++
//! generator. Its state `s[0..4]` advances as
//!
//! ```text
//! out  = rotl(s0 + s3, 23) + s0
//! t    = s1 << 17
//! s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
//! ```
//!
//! and is initialised from a `u64` seed by four SplitMix64 outputs
//! (`z += 0x9e3779b97f4a7c15; z = (z ^ z>>30)·0xbf58476d1ce4e5b9;
//! z = (z ^ z>>27)·0x94d049bb133111eb; z ^ z>>31`).
//!
//! Sub-streams (per epoch, per sweep row, per synthetic record) use
//! [`derive_seed`] so that a single top-level seed fixes a whole run.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Mixes a parent seed with a stream id via one SplitMix64 output of
/// `seed ^ (stream · 0x9e3779b97f4a7c15)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut sm = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    sm.next_u64()
}

/// Seed-stream tags, kept distinct so that e.g. shuffling and dropout never
/// share a generator.
pub mod stream {
    pub const INIT: u64 = 0x1;
    pub const SHUFFLE: u64 = 0x2;
    pub const DROPOUT: u64 = 0x3;
    pub const SPLIT: u64 = 0x4;
    pub const DATA: u64 = 0x5;
    pub const HOLDOUT_A: u64 = 0x6;
    pub const HOLDOUT_B: u64 = 0x7;
    pub const ROW: u64 = 0x8;
}

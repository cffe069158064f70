//! Multi-task learning benchmark for tabular property prediction.
//!
//! The crate trains three model families on union datasets (samples carry
//! only a subset of the task labels) and measures when joint training hurts:
//!
//! * [`models::IndependentModel`]: one network per task.
//! * [`models::SharedMtlModel`]: a shared backbone with per-task heads.
//! * [`models::StructuredMtlModel`]: the shared model plus a learned task
//!   relation graph that mixes auxiliary predictions across tasks.
//!
//! Everything numerical (layers, backpropagation, Adam) lives in
//! [`numeric`]; [`experiments`] runs the comparison and diagnostic studies
//! and [`cli`] exposes them as the `mtlbench` command.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod parallel;
pub mod training;

pub use error::{Error, Result};

/// Deterministic generator used for every source of randomness.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream identifier (epoch, group, worker).
///
/// SplitMix64 finalizer over the combined words; stable across platforms.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream)
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a seeded generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(derive_seed(seed, stream))
}

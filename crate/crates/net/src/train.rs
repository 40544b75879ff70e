//! Shared training plumbing: options, per-step RNG derivation and loss
//! records.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Options for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: u64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self { steps, seed }
    }
}

/// RNG for one training step, derived statelessly from the run seed so that
/// resumed runs replay the identical sample sequence.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (step.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Pick the sample index for a step.
pub fn step_sample_index(seed: u64, step: u64, n: usize) -> usize {
    step_rng(seed, step).random_range(0..n)
}

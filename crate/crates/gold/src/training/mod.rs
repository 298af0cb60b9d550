//! Optimization loops: maximum likelihood, off-policy policy gradient from
//! demonstrations, on-policy policy gradient, and exact enumerated
//! gradients for checking all of them.

pub mod exact;
pub mod gold;
pub mod mle;
pub mod pg;
pub mod report;

pub use exact::{
    enumerated_per_action_gradient, enumerated_per_decision_gradient, exact_policy_gradient,
};
pub use gold::{gold_batch_gradient, importance_weights, train_gold, GoldConfig, WeightMode};
pub use mle::{mle_batch_gradient, train_mle, MleConfig};
pub use pg::{pg_batch_gradient, train_pg, PgConfig};
pub use report::{EvalPoint, TrainOutcome, TrainReport};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;

/// Tags an optimizer failure with the update index it happened at.
pub(crate) fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (update {step})")),
        other => other,
    }
}

/// Seeded mini-batch schedule: a fresh shuffle of `0..n` each epoch, full
/// batches only (a ragged tail carries over into the next shuffle).
pub struct BatchIter {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0 && batch_size > 0, "empty batch schedule");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchIter {
            order,
            pos: 0,
            batch_size: batch_size.min(n),
            rng,
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        batch
    }
}

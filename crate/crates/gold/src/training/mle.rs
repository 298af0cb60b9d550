//! Maximum-likelihood training with periodic dev evaluation and
//! best-checkpoint selection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::evaluation::heldout_nll;
use crate::policy::{GradVector, Optimizer, OptimizerConfig, Policy};
use crate::training::report::{EvalPoint, TrainOutcome, TrainReport};
use crate::training::{with_step, BatchIter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eval_every: usize,
    pub seed: u64,
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over the batch of the log-likelihood gradient of each example.
pub fn mle_batch_gradient(policy: &Policy, batch: &[&Example]) -> Result<GradVector> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = GradVector::zeros(policy.num_params());
    let scale = 1.0 / batch.len() as f64;
    let mut weights: Vec<f64> = Vec::new();
    for ex in batch {
        weights.clear();
        weights.resize(ex.y.len(), 1.0);
        policy.accumulate_weighted_logprob_grad(&ex.x, &ex.y, &weights, scale, &mut grad.0)?;
    }
    Ok(grad)
}

/// Trains by gradient ascent on mean log-likelihood. Returns the
/// checkpoint with the lowest dev NLL seen at any evaluation, which for
/// zero steps is the initial policy itself.
pub fn train_mle(
    init: &Policy,
    train: &[Example],
    dev: &[Example],
    cfg: &MleConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("empty train or dev split".into()));
    }
    let started = Instant::now();
    let mut policy = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, policy.num_params());
    let mut batches = BatchIter::new(train.len(), cfg.batch_size, cfg.seed);
    let mut report = TrainReport::new("mle");

    let (s0, _) = heldout_nll(&policy, dev)?;
    report.push(EvalPoint {
        step: 0,
        dev_nll: s0.mean_nll,
        dev_ppl: s0.perplexity,
        dev_bleu: None,
        mean_weight: None,
        mean_return: None,
    });
    let mut best = (s0.mean_nll, 0usize, policy.clone());

    for step in 0..cfg.steps {
        let idx = batches.next_batch().to_vec();
        let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let grad = mle_batch_gradient(&policy, &batch)?;
        opt.step(&mut policy, &grad)
            .map_err(|e| with_step(e, step))?;

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let (s, _) = heldout_nll(&policy, dev)?;
            if !s.mean_nll.is_finite() {
                return Err(Error::NonFinite(format!(
                    "dev loss diverged by update {done}"
                )));
            }
            report.push(EvalPoint {
                step: done,
                dev_nll: s.mean_nll,
                dev_ppl: s.perplexity,
                dev_bleu: None,
                mean_weight: None,
                mean_return: None,
            });
            if s.mean_nll < best.0 {
                best = (s.mean_nll, done, policy.clone());
            }
        }
    }

    report.steps = cfg.steps;
    report.best_step = best.1;
    report.best_metric = best.0;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        policy: best.2,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate_oracle, sample_contexts, sample_oracle_dataset, OracleGenConfig};
    use crate::policy::{OptAlgo, TabularPolicy};

    fn task(
        seed: u64,
        n_train: usize,
        n_dev: usize,
    ) -> (crate::oracle::OracleSpec, Vec<Example>, Vec<Example>) {
        // A generous cap keeps truncation mass negligible, so the stationary
        // tables are (up to sampling noise) the true data distribution.
        let cfg = OracleGenConfig {
            vocab_size: 4,
            num_classes: 2,
            max_len: 40,
            seed,
            ..OracleGenConfig::default()
        };
        let spec = generate_oracle(&cfg).unwrap();
        let contexts = sample_contexts(spec.vocab(), 20, 2, seed ^ 1);
        let train = sample_oracle_dataset(&spec, &contexts, n_train / 20, seed ^ 2).unwrap();
        let dev_contexts = sample_contexts(spec.vocab(), 10, 2, seed ^ 3);
        let dev = sample_oracle_dataset(&spec, &dev_contexts, n_dev / 10, seed ^ 4).unwrap();
        (spec, train.examples, dev.examples)
    }

    fn adam(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            algo: OptAlgo::Adam,
            lr,
        }
    }

    fn mle_cfg(steps: usize, lr: f64) -> MleConfig {
        MleConfig {
            steps,
            batch_size: 50,
            optimizer: adam(lr),
            eval_every: 100,
            seed: 11,
        }
    }

    #[test]
    fn batch_gradient_is_the_mean_of_example_gradients() {
        let (spec, train, _) = task(3, 40, 10);
        let policy = Policy::Tabular(TabularPolicy::new(2, 2, spec.vocab().size()).unwrap());
        let batch: Vec<&Example> = train.iter().take(4).collect();
        let grad = mle_batch_gradient(&policy, &batch).unwrap();
        let mut want = GradVector::zeros(policy.num_params());
        for ex in &batch {
            let ones = vec![1.0; ex.y.len()];
            let g = policy.weighted_logprob_grad(&ex.x, &ex.y, &ones).unwrap();
            want.add_scaled(&g, 0.25);
        }
        for (a, b) in grad.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn well_specified_model_reaches_the_entropy_rate() {
        let (spec, train, dev) = task(7, 4000, 400);
        let init = Policy::Tabular(TabularPolicy::new(2, 2, spec.vocab().size()).unwrap());
        let out = train_mle(&init, &train, &dev, &mle_cfg(1200, 0.1)).unwrap();
        // The generating tables themselves are the achievable floor on this
        // sample; the fitted model should land within estimation error of it.
        let oracle_policy = Policy::Tabular(spec.to_policy());
        let (floor, _) = heldout_nll(&oracle_policy, &dev).unwrap();
        let (s, _) = heldout_nll(&out.policy, &dev).unwrap();
        assert!(
            s.mean_nll - floor.mean_nll < 0.05,
            "dev nll {} vs oracle floor {}",
            s.mean_nll,
            floor.mean_nll
        );
        // And the sample itself should sit near the analytic entropy rate.
        let contexts = sample_contexts(spec.vocab(), 10, 2, 7 ^ 3);
        let rate = spec.entropy_rate(&contexts);
        assert!(
            (s.mean_nll - rate).abs() < 0.1,
            "dev nll {} vs entropy rate {rate}",
            s.mean_nll
        );
        // The selected checkpoint is the best evaluation in the history.
        let min = out
            .report
            .points
            .iter()
            .map(|p| p.dev_nll)
            .fold(f64::MAX, f64::min);
        assert!((out.report.best_metric - min).abs() < 1e-15);
        assert!((s.mean_nll - min).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_the_initial_policy() {
        let (spec, train, dev) = task(5, 40, 20);
        let init = Policy::Tabular(TabularPolicy::new(1, 2, spec.vocab().size()).unwrap());
        let out = train_mle(&init, &train, &dev, &mle_cfg(0, 0.05)).unwrap();
        assert_eq!(out.policy.params(), init.params());
        assert_eq!(out.report.points.len(), 1);
        assert_eq!(out.report.best_step, 0);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let (spec, train, dev) = task(9, 40, 20);
        let init = Policy::Tabular(TabularPolicy::new(1, 2, spec.vocab().size()).unwrap());
        let cfg = MleConfig {
            steps: 3,
            batch_size: 8,
            optimizer: OptimizerConfig {
                algo: OptAlgo::Sgd,
                lr: f64::MAX,
            },
            eval_every: 1,
            seed: 1,
        };
        let err = train_mle(&init, &train, &dev, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, train, dev) = task(13, 100, 20);
        let init = Policy::Tabular(TabularPolicy::new(1, 2, spec.vocab().size()).unwrap());
        let cfg = mle_cfg(30, 0.05);
        let a = train_mle(&init, &train, &dev, &cfg).unwrap();
        let b = train_mle(&init, &train, &dev, &cfg).unwrap();
        assert_eq!(a.policy.params(), b.policy.params());
        assert_eq!(a.report.points, b.report.points);
    }

    #[test]
    fn config_validation() {
        assert!(mle_cfg(1, 0.1).validate().is_ok());
        let mut bad = mle_cfg(1, 0.1);
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
        bad = mle_cfg(1, 0.1);
        bad.eval_every = 0;
        assert!(bad.validate().is_err());
    }
}

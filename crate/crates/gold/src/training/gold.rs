//! Off-policy policy gradient from demonstrations.
//!
//! Demonstrations stand in for rollouts: each reference token is treated
//! as an action whose return is computed from a frozen likelihood model,
//! and whose importance weight comes from a periodically re-synced
//! snapshot of the learner, floored to keep variance bounded. The learner
//! and the snapshot both start from the same likelihood-trained policy.

use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Sequence, TokenId};
use crate::decoding::{decode, DecodeMethod};
use crate::error::{Error, Result};
use crate::evaluation::bleu::corpus_bleu;
use crate::evaluation::heldout_nll;
use crate::evaluation::sensitivity::{strip_eos, BLEU_ORDER};
use crate::policy::{GradVector, Optimizer, OptimizerConfig, Policy};
use crate::reward::RewardSpec;
use crate::training::report::{EvalPoint, TrainOutcome, TrainReport};
use crate::training::{with_step, BatchIter};

/// How per-step importance weights are formed from the snapshot.
pub enum WeightMode<'a> {
    /// `max(floor, snapshot probability of the step's action)`: the
    /// behavior policy is treated as unknown and absorbed.
    PerAction,
    /// `max(floor, cumulative product of snapshot/behavior step ratios)`,
    /// for studies where the behavior policy is explicitly known.
    FullProduct { behavior: &'a Policy },
}

/// Per-step importance weights for demonstration `y`; `floor` truncates
/// each weight from below. A floor of one forces every weight to exactly
/// one.
pub fn importance_weights(
    snapshot: &Policy,
    x: &Sequence,
    y: &Sequence,
    floor: f64,
    mode: WeightMode,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::Config(format!(
            "weight floor {floor} outside [0, 1]"
        )));
    }
    let snap = snapshot.step_logprobs(x, y)?;
    match mode {
        WeightMode::PerAction => Ok(snap.iter().map(|lp| lp.exp().max(floor)).collect()),
        WeightMode::FullProduct { behavior } => {
            let beh = behavior.step_logprobs(x, y)?;
            let mut cum = 0.0;
            Ok(snap
                .iter()
                .zip(&beh)
                .map(|(s, b)| {
                    cum += s - b;
                    cum.exp().max(floor)
                })
                .collect())
        }
    }
}

/// Per-step gradient coefficients `weight * return` for one demonstration,
/// plus their batch-diagnostic means. Rewards come from the frozen
/// `reward_ref` model; weights from `snapshot`.
pub(crate) fn gold_coefficients(
    snapshot: &Policy,
    reward_ref: &Policy,
    x: &Sequence,
    y: &Sequence,
    reward: &RewardSpec,
    floor: f64,
) -> Result<(Vec<f64>, f64, f64)> {
    let weights = importance_weights(snapshot, x, y, floor, WeightMode::PerAction)?;
    let ref_lps = reward_ref.step_logprobs(x, y)?;
    let returns = reward.returns(&reward.step_rewards(&ref_lps));
    let mut coeffs = Vec::with_capacity(weights.len());
    let mut w_sum = 0.0;
    let mut q_sum = 0.0;
    for (w, q) in weights.iter().zip(&returns) {
        let c = w * q;
        if !c.is_finite() {
            return Err(Error::NonFinite(format!(
                "weighted return {c} (weight {w}, return {q})"
            )));
        }
        coeffs.push(c);
        w_sum += w;
        q_sum += q;
    }
    let n = coeffs.len() as f64;
    Ok((coeffs, w_sum / n, q_sum / n))
}

/// Mean over the batch of importance-weighted return-scaled score-function
/// gradients. Returns the gradient plus mean weight and mean return.
pub fn gold_batch_gradient(
    policy: &Policy,
    snapshot: &Policy,
    reward_ref: &Policy,
    batch: &[&Example],
    reward: &RewardSpec,
    floor: f64,
) -> Result<(GradVector, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = GradVector::zeros(policy.num_params());
    let scale = 1.0 / batch.len() as f64;
    let mut w_mean = 0.0;
    let mut q_mean = 0.0;
    for ex in batch {
        let (coeffs, w, q) = gold_coefficients(snapshot, reward_ref, &ex.x, &ex.y, reward, floor)?;
        policy.accumulate_weighted_logprob_grad(&ex.x, &ex.y, &coeffs, scale, &mut grad.0)?;
        w_mean += w * scale;
        q_mean += q * scale;
    }
    Ok((grad, w_mean, q_mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eval_every: usize,
    pub reward: RewardSpec,
    /// Importance-weight floor `u`; one reduces training to maximum
    /// likelihood scaled by the returns.
    pub weight_floor: f64,
    /// Updates between snapshot re-syncs.
    pub sync_every: usize,
    /// Generation budget for dev decoding.
    pub dev_max_len: usize,
    pub seed: u64,
}

impl GoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval cadence must be positive".into()));
        }
        if self.sync_every == 0 {
            return Err(Error::Config("sync cadence must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_floor) {
            return Err(Error::Config(format!(
                "weight floor {} outside [0, 1]",
                self.weight_floor
            )));
        }
        if self.dev_max_len == 0 {
            return Err(Error::Config(
                "dev generation budget must be positive".into(),
            ));
        }
        self.reward.validate()
    }
}

/// Greedy corpus BLEU-4 against the references, the checkpoint-selection
/// metric for learners that target generation quality.
pub(crate) fn dev_greedy_bleu(policy: &Policy, dev: &[Example], max_len: usize) -> Result<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut candidates: Vec<Vec<TokenId>> = Vec::with_capacity(dev.len());
    let mut references: Vec<Vec<TokenId>> = Vec::with_capacity(dev.len());
    for ex in dev {
        let y = decode(policy, &ex.x, &DecodeMethod::Greedy, max_len, &mut rng)?;
        candidates.push(strip_eos(y.ids()));
        references.push(strip_eos(ex.y.ids()));
    }
    corpus_bleu(&candidates, &references, BLEU_ORDER)
}

/// Off-policy policy-gradient training on demonstrations, starting from
/// (and keeping rewards anchored to) a likelihood-trained policy. The
/// checkpoint with the best dev BLEU is returned; zero steps returns the
/// initial policy unchanged.
pub fn train_gold(
    init: &Policy,
    train: &[Example],
    dev: &[Example],
    cfg: &GoldConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("empty train or dev split".into()));
    }
    let started = Instant::now();
    let mut policy = init.clone();
    let mut snapshot = init.clone();
    let reward_ref = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, policy.num_params());
    let mut batches = BatchIter::new(train.len(), cfg.batch_size, cfg.seed);
    let mut report = TrainReport::new("gold");

    let (s0, _) = heldout_nll(&policy, dev)?;
    let bleu0 = dev_greedy_bleu(&policy, dev, cfg.dev_max_len)?;
    report.push(EvalPoint {
        step: 0,
        dev_nll: s0.mean_nll,
        dev_ppl: s0.perplexity,
        dev_bleu: Some(bleu0),
        mean_weight: None,
        mean_return: None,
    });
    let mut best = (bleu0, 0usize, policy.clone());

    for step in 0..cfg.steps {
        let idx = batches.next_batch().to_vec();
        let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let (grad, w_mean, q_mean) = gold_batch_gradient(
            &policy,
            &snapshot,
            &reward_ref,
            &batch,
            &cfg.reward,
            cfg.weight_floor,
        )
        .map_err(|e| with_step(e, step))?;
        opt.step(&mut policy, &grad)
            .map_err(|e| with_step(e, step))?;
        if step % cfg.sync_every == 0 {
            snapshot = policy.clone();
        }

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let (s, _) = heldout_nll(&policy, dev)?;
            if !s.mean_nll.is_finite() {
                return Err(Error::NonFinite(format!(
                    "dev loss diverged by update {done}"
                )));
            }
            let bleu = dev_greedy_bleu(&policy, dev, cfg.dev_max_len)?;
            report.push(EvalPoint {
                step: done,
                dev_nll: s.mean_nll,
                dev_ppl: s.perplexity,
                dev_bleu: Some(bleu),
                mean_weight: Some(w_mean),
                mean_return: Some(q_mean),
            });
            if bleu > best.0 {
                best = (bleu, done, policy.clone());
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

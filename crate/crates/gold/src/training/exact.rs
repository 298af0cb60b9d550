//! Exact gradients by enumeration over every budgeted complete sequence.
//!
//! These are the measuring sticks for the sampled estimators: the true
//! policy gradient of an expected reward, the exact expectation of the
//! ratio-corrected off-policy estimator (which must match it), and the
//! exact expectation of the floored per-action estimator (which need
//! not, and is how its bias is demonstrated).

use crate::corpus::{enumerate_complete_sequences, Sequence, Vocab, RESERVED};
use crate::error::Result;
use crate::policy::{GradVector, Policy};
use crate::reward::RewardSpec;
use crate::training::gold::gold_coefficients;

fn budgeted_support(policy: &Policy, max_len: usize, limit: u64) -> Result<Vec<Sequence>> {
    let vocab = Vocab::synthetic(policy.vocab_size() - RESERVED)?;
    enumerate_complete_sequences(&vocab, max_len, limit)
}

/// True gradient of `E_{y ~ policy capped at max_len}[reward(y)]`, by
/// full enumeration. The forced final step of budget-length sequences is
/// not a decision and contributes no gradient.
pub fn exact_policy_gradient<F>(
    policy: &Policy,
    x: &Sequence,
    max_len: usize,
    limit: u64,
    reward: F,
) -> Result<GradVector>
where
    F: Fn(&Sequence) -> f64,
{
    let mut grad = GradVector::zeros(policy.num_params());
    let mut weights: Vec<f64> = Vec::new();
    for y in &budgeted_support(policy, max_len, limit)? {
        let lp = policy.sequence_logprob_capped(x, y, max_len)?;
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let scale = lp.exp() * reward(y);
        if scale == 0.0 {
            continue;
        }
        weights.clear();
        weights.resize(y.len(), 1.0);
        if y.len() == max_len {
            *weights.last_mut().unwrap() = 0.0;
        }
        policy.accumulate_weighted_logprob_grad(x, y, &weights, scale, &mut grad.0)?;
    }
    Ok(grad)
}

/// Exact expectation, over demonstrations drawn from `behavior` capped at
/// `max_len`, of the ratio-corrected off-policy estimator
/// `sum_k gamma^k r_k W_k sum_{t<=k} grad log pi(a_t)` with
/// `W_k = prod_{j<=k} pi(a_j)/behavior(a_j)`. Rewards beyond a sequence's
/// last step do not exist, and the forced final step at the budget is a
/// ratio of one and carries no gradient. Equals `exact_policy_gradient`
/// of `sum_k gamma^k r_k` whenever `behavior` covers the policy's
/// support.
pub fn enumerated_per_decision_gradient<F>(
    policy: &Policy,
    behavior: &Policy,
    x: &Sequence,
    max_len: usize,
    limit: u64,
    gamma: f64,
    step_rewards: F,
) -> Result<GradVector>
where
    F: Fn(&Sequence) -> Vec<f64>,
{
    let mut grad = GradVector::zeros(policy.num_params());
    for y in &budgeted_support(policy, max_len, limit)? {
        let lp_b = behavior.sequence_logprob_capped(x, y, max_len)?;
        if lp_b == f64::NEG_INFINITY {
            continue;
        }
        let p_b = lp_b.exp();
        let pi = policy.step_logprobs(x, y)?;
        let bh = behavior.step_logprobs(x, y)?;
        let rewards = step_rewards(y);
        assert_eq!(rewards.len(), y.len(), "one reward per step");
        let m = y.len();
        let forced = m == max_len;
        // Cumulative importance products, the forced step contributing
        // a ratio of exactly one.
        let mut ratio = vec![0.0; m];
        let mut cum = 0.0;
        for k in 0..m {
            if !(forced && k == m - 1) {
                cum += pi[k] - bh[k];
            }
            ratio[k] = cum.exp();
        }
        // Coefficient on grad log pi(a_t) is the reward-to-go weighted
        // by the matching products: sum_{k>=t} gamma^k r_k W_k.
        let mut weights = vec![0.0; m];
        let mut suffix = 0.0;
        for t in (0..m).rev() {
            suffix += gamma.powi(t as i32) * rewards[t] * ratio[t];
            weights[t] = suffix;
        }
        if forced {
            weights[m - 1] = 0.0;
        }
        policy.accumulate_weighted_logprob_grad(x, y, &weights, p_b, &mut grad.0)?;
    }
    Ok(grad)
}

/// Exact expectation, over demonstrations drawn from `behavior` capped at
/// `max_len`, of the floored per-action estimator used in training:
/// `sum_t max(floor, snapshot(a_t)) * Q_t * grad log pi(a_t)` with the
/// truncated-window returns of `reward` computed from `reward_ref`. The
/// estimator never sees the budget, so no step is exempted here.
#[allow(clippy::too_many_arguments)]
pub fn enumerated_per_action_gradient(
    policy: &Policy,
    snapshot: &Policy,
    reward_ref: &Policy,
    behavior: &Policy,
    x: &Sequence,
    max_len: usize,
    limit: u64,
    reward: &RewardSpec,
    floor: f64,
) -> Result<GradVector> {
    let mut grad = GradVector::zeros(policy.num_params());
    for y in &budgeted_support(policy, max_len, limit)? {
        let lp_b = behavior.sequence_logprob_capped(x, y, max_len)?;
        if lp_b == f64::NEG_INFINITY {
            continue;
        }
        let (coeffs, _, _) = gold_coefficients(snapshot, reward_ref, x, y, reward, floor)?;
        policy.accumulate_weighted_logprob_grad(x, y, &coeffs, lp_b.exp(), &mut grad.0)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_complete_sequences;
    use crate::policy::TabularPolicy;
    use crate::reward::RewardKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LIMIT: u64 = 1_000_000;

    /// Order-1 tabular policy over `real` tokens with seeded logits.
    fn random_policy(real: usize, seed: u64) -> Policy {
        let mut t = TabularPolicy::new(1, 1, real + RESERVED).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in t.params_mut() {
            *p = rng.gen_range(-1.5..1.5);
        }
        Policy::Tabular(t)
    }

    #[test]
    fn constant_reward_means_zero_gradient() {
        let policy = random_policy(2, 3);
        let x = Sequence::from_raw(vec![3]);
        let grad = exact_policy_gradient(&policy, &x, 3, LIMIT, |_| 1.0).unwrap();
        for g in grad.as_slice() {
            assert!(g.abs() < 1e-12, "residual {g}");
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let policy = random_policy(2, 7);
        let x = Sequence::from_raw(vec![4]);
        let cap = 3;
        let reward = |y: &Sequence| y.len() as f64; // favors long sequences
        let grad = exact_policy_gradient(&policy, &x, cap, LIMIT, reward).unwrap();

        let objective = |p: &Policy| -> f64 {
            let mut j = 0.0;
            for y in budgeted_support(p, cap, LIMIT).unwrap() {
                let lp = p.sequence_logprob_capped(&x, &y, cap).unwrap();
                if lp > f64::NEG_INFINITY {
                    j += lp.exp() * reward(&y);
                }
            }
            j
        };
        let eps = 1e-5;
        for i in 0..policy.num_params() {
            let mut hi = policy.clone();
            hi.params_mut()[i] += eps;
            let mut lo = policy.clone();
            lo.params_mut()[i] -= eps;
            let fd = (objective(&hi) - objective(&lo)) / (2.0 * eps);
            assert!(
                (grad.as_slice()[i] - fd).abs() < 1e-7,
                "param {i}: exact {} vs fd {fd}",
                grad.as_slice()[i]
            );
        }
    }

    #[test]
    fn ratio_corrected_expectation_is_the_true_gradient() {
        // Off-policy with a mismatched behavior policy: the enumerated
        // expectation of the ratio-corrected estimator must equal the
        // true gradient of the summed discounted reward.
        let policy = random_policy(2, 11);
        let behavior = random_policy(2, 12);
        let reward_ref = random_policy(2, 13);
        let x = Sequence::from_raw(vec![3, 4]);
        let cap = 3;
        let gamma = 0.9;
        let spec = RewardSpec {
            kind: RewardKind::LogProb,
            clamp: 0.01,
            baseline: 0.0,
            gamma,
            horizon: 10, // longer than any sequence: no truncation
        };
        let per_step = |y: &Sequence| spec.step_rewards(&reward_ref.step_logprobs(&x, y).unwrap());
        let off =
            enumerated_per_decision_gradient(&policy, &behavior, &x, cap, LIMIT, gamma, per_step)
                .unwrap();
        let total = |y: &Sequence| {
            per_step(y)
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum::<f64>()
        };
        let exact = exact_policy_gradient(&policy, &x, cap, LIMIT, total).unwrap();
        for (a, b) in off.as_slice().iter().zip(exact.as_slice()) {
            assert!((a - b).abs() < 1e-10, "off-policy {a} vs exact {b}");
        }
    }

    #[test]
    fn on_policy_behavior_is_also_exact() {
        // Sampling from the policy itself: ratios are all one but the
        // identity should hold just the same.
        let policy = random_policy(3, 21);
        let x = Sequence::from_raw(vec![5]);
        let cap = 3;
        let per_step = |y: &Sequence| vec![1.0; y.len()]; // reward each step alive
        let off = enumerated_per_decision_gradient(&policy, &policy, &x, cap, LIMIT, 1.0, per_step)
            .unwrap();
        let exact = exact_policy_gradient(&policy, &x, cap, LIMIT, |y| y.len() as f64).unwrap();
        for (a, b) in off.as_slice().iter().zip(exact.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn floored_per_action_estimator_is_biased() {
        // Two-step budget, mismatched behavior, a floor and a truncated
        // return window: the per-action expectation departs from the
        // true gradient by a visible margin.
        let policy = random_policy(1, 31);
        let behavior = random_policy(1, 32);
        let reward_ref = random_policy(1, 33);
        let x = Sequence::from_raw(vec![3]);
        let cap = 2;
        let spec = RewardSpec {
            kind: RewardKind::Prob,
            clamp: 0.1,
            baseline: 0.0,
            gamma: 1.0,
            horizon: 0,
        };
        let per_action = enumerated_per_action_gradient(
            &policy,
            &policy, // snapshot synced to the learner
            &reward_ref,
            &behavior,
            &x,
            cap,
            LIMIT,
            &spec,
            0.3,
        )
        .unwrap();
        let per_step = |y: &Sequence| spec.step_rewards(&reward_ref.step_logprobs(&x, y).unwrap());
        let total = |y: &Sequence| per_step(y).iter().sum::<f64>();
        let exact = exact_policy_gradient(&policy, &x, cap, LIMIT, total).unwrap();
        let gap = per_action
            .as_slice()
            .iter()
            .zip(exact.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap > 1e-3, "estimators coincide unexpectedly: gap {gap}");
    }

    #[test]
    fn support_guard_stops_oversized_enumerations() {
        let policy = random_policy(3, 41);
        let count = count_complete_sequences(3, 4);
        let err = budgeted_support(&policy, 4, (count - 1) as u64).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}

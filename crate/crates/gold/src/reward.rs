//! Per-step rewards on demonstration tokens and their truncated returns.
//!
//! Rewards are functions of a *frozen* likelihood model's per-step
//! probability of the demonstrated token — the scoring model never moves
//! during training, so the reward field is fixed. Three shapes:
//!
//! - `delta`: 1 on the final (`EOS`) step, 0 elsewhere; the return of an
//!   earlier step discounts that terminal unit all the way back, skipping the
//!   horizon truncation entirely.
//! - `logprob`: `ln(max(clamp, p))`, a log-likelihood floor.
//! - `prob`: `max(clamp, p)`, the raw probability floor.
//!
//! Returns subtract a constant baseline and, except for `delta`, sum at most
//! `horizon + 1` discounted reward terms ahead of each step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Delta,
    LogProb,
    Prob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Probability floor before the reward transform; unused by `delta`.
    pub clamp: f64,
    /// Constant subtracted from every return.
    pub baseline: f64,
    pub gamma: f64,
    /// Number of future steps a non-`delta` return looks ahead.
    pub horizon: usize,
}

impl RewardSpec {
    /// Published defaults per reward shape.
    pub fn defaults_for(kind: RewardKind) -> Self {
        match kind {
            RewardKind::Delta => RewardSpec {
                kind,
                clamp: 0.0,
                baseline: 0.0,
                gamma: 1.0,
                horizon: 5,
            },
            RewardKind::LogProb => RewardSpec {
                kind,
                clamp: 0.01,
                baseline: -60.0,
                gamma: 1.0,
                horizon: 5,
            },
            RewardKind::Prob => RewardSpec {
                kind,
                clamp: 0.1,
                baseline: 0.0,
                gamma: 1.0,
                horizon: 5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.kind == RewardKind::LogProb && self.clamp <= 0.0 {
            return Err(Error::Config(
                "logprob reward needs a positive clamp".into(),
            ));
        }
        if self.clamp < 0.0 || !self.clamp.is_finite() {
            return Err(Error::Config(format!("bad clamp {}", self.clamp)));
        }
        if !self.baseline.is_finite() {
            return Err(Error::Config(format!("bad baseline {}", self.baseline)));
        }
        Ok(())
    }

    /// Per-step rewards for one demonstration, from the frozen scorer's
    /// per-step log-probabilities of the demonstrated tokens.
    pub fn step_rewards(&self, frozen_logprobs: &[f64]) -> Vec<f64> {
        let t_last = frozen_logprobs.len() - 1;
        match self.kind {
            RewardKind::Delta => {
                let mut r = vec![0.0; frozen_logprobs.len()];
                r[t_last] = 1.0;
                r
            }
            RewardKind::LogProb => {
                let floor = self.clamp.ln();
                frozen_logprobs.iter().map(|&lp| lp.max(floor)).collect()
            }
            RewardKind::Prob => frozen_logprobs
                .iter()
                .map(|&lp| lp.exp().max(self.clamp))
                .collect(),
        }
    }

    /// Baselined return of every step. `delta` discounts the terminal reward
    /// back without truncation; the rest sum a discounted window of
    /// `horizon + 1` steps.
    pub fn returns(&self, rewards: &[f64]) -> Vec<f64> {
        let t_last = rewards.len() - 1;
        (0..rewards.len())
            .map(|t| {
                let q = match self.kind {
                    RewardKind::Delta => self.gamma.powi((t_last - t) as i32) * rewards[t_last],
                    _ => {
                        let end = (t + self.horizon).min(t_last);
                        let mut acc = 0.0;
                        let mut disc = 1.0;
                        for &r in &rewards[t..=end] {
                            acc += disc * r;
                            disc *= self.gamma;
                        }
                        acc
                    }
                };
                q - self.baseline
            })
            .collect()
    }
}

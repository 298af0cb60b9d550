//! Sample quality: expected data-process log-probability of generations.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{context_class, enumerate_complete_sequences, Sequence};
use crate::error::{Error, Result};
use crate::oracle::OracleSpec;
use crate::policy::Policy;
use crate::stats::{bootstrap_mean_ci, derive_seed, mean};

/// Largest budgeted-sequence support that `Enumerate` will walk.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum QualityMode {
    /// Exact expectation over every budgeted complete sequence.
    Enumerate,
    /// Ancestral samples spread round-robin over the contexts.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityEstimate {
    /// Expected total log-probability the data process assigns to one
    /// generated sequence, averaged over contexts.
    pub mean: f64,
    /// Percentile bootstrap interval; absent for exact enumeration.
    pub ci: Option<(f64, f64)>,
    pub samples: usize,
}

/// How well `policy` samples score under the data process, higher is
/// better. Generation runs under the process's length budget so both
/// distributions share a support.
pub fn perceptual_quality(
    policy: &Policy,
    oracle: &OracleSpec,
    contexts: &[Sequence],
    mode: QualityMode,
    seed: u64,
) -> Result<QualityEstimate> {
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("no contexts for quality".into()));
    }
    if policy.vocab_size() != oracle.vocab().size() {
        return Err(Error::InvalidArgument(format!(
            "vocab mismatch: policy {} vs process {}",
            policy.vocab_size(),
            oracle.vocab().size()
        )));
    }
    let cap = oracle.max_len();
    match mode {
        QualityMode::Enumerate => {
            let all = enumerate_complete_sequences(oracle.vocab(), cap, ENUMERATION_LIMIT)?;
            // The per-context value depends only on the pair of class ids,
            // so duplicate pairs are computed once.
            let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
            let mut total = 0.0;
            for x in contexts {
                let key = (
                    context_class(x, policy.num_classes()),
                    context_class(x, oracle.num_classes()),
                );
                let value = match memo.get(&key) {
                    Some(&v) => v,
                    None => {
                        let mut v = 0.0;
                        for y in &all {
                            let lp = policy.sequence_logprob_capped(x, y, cap)?;
                            if lp == f64::NEG_INFINITY {
                                continue;
                            }
                            v += lp.exp() * oracle.logprob(x, y)?;
                        }
                        memo.insert(key, v);
                        v
                    }
                };
                total += value;
            }
            Ok(QualityEstimate {
                mean: total / contexts.len() as f64,
                ci: None,
                samples: all.len(),
            })
        }
        QualityMode::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::InvalidArgument(
                    "monte carlo quality needs at least one sample".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scores = Vec::with_capacity(samples);
            for i in 0..samples {
                let x = &contexts[i % contexts.len()];
                let y = policy.sample_sequence(x, &mut rng, cap)?;
                scores.push(oracle.logprob(x, &y)?);
            }
            let ci = bootstrap_mean_ci(&scores, BOOTSTRAP_RESAMPLES, derive_seed(seed, &[1]));
            Ok(QualityEstimate {
                mean: mean(&scores),
                ci: Some(ci),
                samples,
            })
        }
    }
}

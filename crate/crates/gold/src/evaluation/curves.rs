//! Degradation curves: sample quality by generation length, and
//! teacher-forced loss by position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::decoding::{decode, DecodeMethod};
use crate::error::{Error, Result};
use crate::oracle::OracleSpec;
use crate::policy::Policy;
use crate::stats::{bootstrap_mean_ci, derive_seed, linear_slope, mean};

const BOOTSTRAP_RESAMPLES: usize = 1000;
const LOW_SAMPLE: usize = 30;
const LENGTH_BUCKET_WIDTH: usize = 2;

/// Generations whose length falls in `[lo, lo + 2)`, scored by the data
/// process per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    pub count: usize,
    pub mean_score: f64,
    pub ci: (f64, f64),
    pub low_sample: bool,
}

/// Teacher-forced statistics at one position, over references long enough
/// to reach it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixPoint {
    pub t: usize,
    pub count: usize,
    pub mean_nll: f64,
    pub nll_ci: (f64, f64),
    pub accuracy: f64,
    pub acc_ci: (f64, f64),
    pub low_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCurves {
    pub method: String,
    pub quality_by_length: Vec<LengthBucket>,
    /// Per-token data-process score regressed on generation length,
    /// fit to the raw (length, score) pairs.
    pub quality_slope: f64,
    /// Generations whose score was not finite and were left out.
    pub skipped_nonfinite: usize,
    pub prefix: Vec<PrefixPoint>,
    /// Reference-token NLL regressed on position.
    pub prefix_nll_slope: f64,
    pub mean_prefix_nll: f64,
}

/// Free-running quality-by-length and teacher-forced loss-by-position
/// curves for one policy. Generation runs under the process's length
/// budget; stochastic methods draw `samples_per_context` sequences per
/// example, deterministic ones decode each example once.
pub fn exposure_curves(
    policy: &Policy,
    oracle: &OracleSpec,
    examples: &[Example],
    method: &DecodeMethod,
    samples_per_context: usize,
    seed: u64,
) -> Result<ExposureCurves> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples for curves".into()));
    }
    if samples_per_context == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sample per context".into(),
        ));
    }
    let cap = oracle.max_len();
    let reps = if method.is_stochastic() {
        samples_per_context
    } else {
        1
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(examples.len() * reps);
    let mut skipped = 0usize;
    for ex in examples {
        for _ in 0..reps {
            let y = decode(policy, &ex.x, method, cap, &mut rng)?;
            let score = oracle.logprob_uncapped(&ex.x, &y)? / y.len() as f64;
            if score.is_finite() {
                pairs.push((y.len(), score));
            } else {
                skipped += 1;
            }
        }
    }

    let mut buckets = Vec::new();
    if !pairs.is_empty() {
        let max_bucket = pairs
            .iter()
            .map(|&(l, _)| l / LENGTH_BUCKET_WIDTH)
            .max()
            .unwrap();
        for b in 0..=max_bucket {
            let scores: Vec<f64> = pairs
                .iter()
                .filter(|&&(l, _)| l / LENGTH_BUCKET_WIDTH == b)
                .map(|&(_, s)| s)
                .collect();
            if scores.is_empty() {
                continue;
            }
            buckets.push(LengthBucket {
                lo: b * LENGTH_BUCKET_WIDTH,
                count: scores.len(),
                mean_score: mean(&scores),
                ci: bootstrap_mean_ci(
                    &scores,
                    BOOTSTRAP_RESAMPLES,
                    derive_seed(seed, &[1, b as u64]),
                ),
                low_sample: scores.len() < LOW_SAMPLE,
            });
        }
    }
    let quality_slope = linear_slope(
        &pairs.iter().map(|&(l, _)| l as f64).collect::<Vec<_>>(),
        &pairs.iter().map(|&(_, s)| s).collect::<Vec<_>>(),
    );

    // Teacher-forced pass: one state walk per reference.
    let mut nll_by_t: Vec<Vec<f64>> = Vec::new();
    let mut hit_by_t: Vec<Vec<f64>> = Vec::new();
    for ex in examples {
        let mut st = policy.start(&ex.x)?;
        for (t, &tok) in ex.y.ids().iter().enumerate() {
            let lps = policy.state_logprobs(&st);
            let pred = lps
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            if nll_by_t.len() <= t {
                nll_by_t.push(Vec::new());
                hit_by_t.push(Vec::new());
            }
            nll_by_t[t].push(-lps[tok as usize]);
            hit_by_t[t].push(if pred == tok as usize { 1.0 } else { 0.0 });
            if t + 1 < ex.y.len() {
                st = policy.advance(&st, tok)?;
            }
        }
    }
    let mut prefix = Vec::with_capacity(nll_by_t.len());
    let mut flat_t = Vec::new();
    let mut flat_nll = Vec::new();
    for (t, nlls) in nll_by_t.iter().enumerate() {
        for &v in nlls {
            flat_t.push(t as f64);
            flat_nll.push(v);
        }
        prefix.push(PrefixPoint {
            t,
            count: nlls.len(),
            mean_nll: mean(nlls),
            nll_ci: bootstrap_mean_ci(nlls, BOOTSTRAP_RESAMPLES, derive_seed(seed, &[2, t as u64])),
            accuracy: mean(&hit_by_t[t]),
            acc_ci: bootstrap_mean_ci(
                &hit_by_t[t],
                BOOTSTRAP_RESAMPLES,
                derive_seed(seed, &[3, t as u64]),
            ),
            low_sample: nlls.len() < LOW_SAMPLE,
        });
    }

    Ok(ExposureCurves {
        method: method.label(),
        quality_by_length: buckets,
        quality_slope,
        skipped_nonfinite: skipped,
        prefix,
        prefix_nll_slope: linear_slope(&flat_t, &flat_nll),
        mean_prefix_nll: mean(&flat_nll),
    })
}

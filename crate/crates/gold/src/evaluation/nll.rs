//! Held-out negative log-likelihood, per-token loss records, and histograms.

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TokenId};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// One scored target token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLossRecord {
    pub example: usize,
    pub step: usize,
    pub token: TokenId,
    pub nll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    pub mean_nll: f64,
    pub perplexity: f64,
    pub token_count: usize,
    pub sequence_count: usize,
}

/// Teacher-forced NLL of every reference token (`EOS` included).
pub fn heldout_nll(
    policy: &Policy,
    examples: &[Example],
) -> Result<(NllSummary, Vec<TokenLossRecord>)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to score".into()));
    }
    let mut records = Vec::new();
    let mut total = 0.0;
    for (i, ex) in examples.iter().enumerate() {
        let steps = policy.step_logprobs(&ex.x, &ex.y)?;
        for (t, lp) in steps.iter().enumerate() {
            let nll = -lp;
            total += nll;
            records.push(TokenLossRecord {
                example: i,
                step: t,
                token: ex.y.ids()[t],
                nll,
            });
        }
    }
    let mean_nll = total / records.len() as f64;
    Ok((
        NllSummary {
            mean_nll,
            perplexity: mean_nll.exp(),
            token_count: records.len(),
            sequence_count: examples.len(),
        },
        records,
    ))
}

/// Fixed-width histogram over nonnegative losses. Bins cover `[i·w, (i+1)·w)`
/// up to the largest observed value; the final entry is the open-ended
/// overflow. Masses are normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllHistogram {
    pub bin_width: f64,
    /// Lower edge of the open-ended final bin.
    pub overflow_edge: f64,
    pub counts: Vec<u64>,
    pub masses: Vec<f64>,
    pub total: usize,
}

pub fn nll_histogram(values: &[f64], bin_width: f64) -> Result<NllHistogram> {
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no losses to bin".into()));
    }
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let regular = (max / bin_width).floor() as usize;
    let mut counts = vec![0u64; regular + 1];
    for &v in values {
        let idx = ((v / bin_width).floor() as usize).min(regular);
        counts[idx] += 1;
    }
    let total = values.len();
    let masses = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(NllHistogram {
        bin_width,
        overflow_edge: regular as f64 * bin_width,
        counts,
        masses,
        total,
    })
}

impl NllHistogram {
    /// Mass of values in `[0, hi)`, for `hi` on a bin edge (rounded down to
    /// one otherwise).
    pub fn mass_below(&self, hi: f64) -> f64 {
        let bins = ((hi / self.bin_width).floor() as usize).min(self.counts.len() - 1);
        self.masses[..bins].iter().sum()
    }

    /// Mass of values at or above `lo` (`lo` rounded down to a bin edge).
    pub fn mass_at_or_above(&self, lo: f64) -> f64 {
        let bins = ((lo / self.bin_width).floor() as usize).min(self.counts.len());
        self.masses[bins.min(self.counts.len() - 1)..].iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sequence, EOS};
    use crate::oracle::{generate_oracle, sample_contexts, sample_oracle_dataset, OracleGenConfig};
    use crate::policy::TabularPolicy;

    fn uniform_examples() -> Vec<Example> {
        // Vocab of 3 real tokens: 4 unmasked outputs each step.
        let x = Sequence::from_raw(vec![3]);
        let y = Sequence::from_raw(vec![4, 5, EOS]);
        vec![Example::new(x, y).unwrap()]
    }

    #[test]
    fn uniform_policy_nll_is_log4() {
        let policy = Policy::Tabular(TabularPolicy::new(1, 1, 6).unwrap());
        let (summary, records) = heldout_nll(&policy, &uniform_examples()).unwrap();
        assert_eq!(summary.token_count, 3);
        assert_eq!(records.len(), 3);
        assert!((summary.mean_nll - (4.0_f64).ln()).abs() < 1e-12);
        assert!((summary.perplexity - 4.0).abs() < 1e-10);
        assert_eq!(records[2].token, EOS);
        assert_eq!(records[2].step, 2);
    }

    #[test]
    fn mean_matches_sequence_logprobs() {
        let cfg = OracleGenConfig {
            vocab_size: 6,
            num_classes: 3,
            max_len: 12,
            seed: 5,
            ..OracleGenConfig::default()
        };
        let spec = generate_oracle(&cfg).unwrap();
        let contexts = sample_contexts(spec.vocab(), 10, 2, 3);
        let ds = sample_oracle_dataset(&spec, &contexts, 5, 11).unwrap();
        let policy = Policy::Tabular(spec.to_policy());
        let (summary, records) = heldout_nll(&policy, &ds.examples).unwrap();
        let mut total = 0.0;
        let mut tokens = 0usize;
        for ex in &ds.examples {
            total -= policy.sequence_logprob(&ex.x, &ex.y).unwrap();
            tokens += ex.y.len();
        }
        assert_eq!(tokens, summary.token_count);
        assert_eq!(tokens, records.len());
        assert!((summary.mean_nll - total / tokens as f64).abs() <= 1e-10);
    }

    #[test]
    fn oracle_as_policy_tracks_entropy_rate() {
        let cfg = OracleGenConfig {
            vocab_size: 8,
            num_classes: 4,
            max_len: 25,
            seed: 9,
            ..OracleGenConfig::default()
        };
        let spec = generate_oracle(&cfg).unwrap();
        let contexts = sample_contexts(spec.vocab(), 40, 2, 8);
        let ds = sample_oracle_dataset(&spec, &contexts, 50, 13).unwrap();
        let policy = Policy::Tabular(spec.to_policy());
        let (summary, records) = heldout_nll(&policy, &ds.examples).unwrap();
        let rate = spec.entropy_rate(&contexts);
        // Standard error of the mean per-token NLL.
        let var = records
            .iter()
            .map(|r| (r.nll - summary.mean_nll).powi(2))
            .sum::<f64>()
            / records.len() as f64;
        let se = (var / records.len() as f64).sqrt();
        assert!(
            (summary.mean_nll - rate).abs() <= 3.0 * se + 0.02,
            "nll {} vs entropy rate {rate} (se {se})",
            summary.mean_nll
        );
    }

    #[test]
    fn histogram_splits_mass_and_overflows() {
        let h = nll_histogram(&[0.001, 5.0], 0.01).unwrap();
        assert!((h.masses[0] - 0.5).abs() < 1e-15);
        assert!((h.masses.last().unwrap() - 0.5).abs() < 1e-15);
        assert!((h.overflow_edge - 5.0).abs() < 1e-9);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_of_equal_values_is_a_point_mass() {
        let h = nll_histogram(&[2.0, 2.0, 2.0], 0.5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(*h.counts.last().unwrap(), 3); // exactly on the last edge
    }

    #[test]
    fn histogram_range_queries() {
        let h = nll_histogram(&[0.01, 0.02, 0.6, 7.0], 0.05).unwrap();
        assert!((h.mass_below(0.05) - 0.5).abs() < 1e-12);
        assert!((h.mass_at_or_above(5.0) - 0.25).abs() < 1e-12);
        assert!((h.mass_at_or_above(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_rejects_bad_input() {
        assert!(nll_histogram(&[], 0.1).is_err());
        assert!(nll_histogram(&[1.0], 0.0).is_err());
    }
}

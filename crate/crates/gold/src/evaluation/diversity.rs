//! N-gram diversity of generated corpora and copying from the inputs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;

pub const MAX_ORDER: usize = 5;

/// Index `n - 1` holds the order-`n` statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    /// Distinct n-grams pooled over all generations.
    pub unique_ngrams: [usize; MAX_ORDER],
    /// Total n-gram windows pooled over all generations.
    pub total_ngrams: [usize; MAX_ORDER],
    /// Unique over total; zero when no windows exist.
    pub distinct_ratio: [f64; MAX_ORDER],
    /// Fraction of a generation's n-gram windows that also occur in its
    /// own input, averaged over pairs with at least one window.
    pub input_overlap: [f64; MAX_ORDER],
}

/// Pooled n-gram diversity (orders 1 through 5) and per-pair input
/// overlap. `generations[i]` is compared against `inputs[i]`.
pub fn diversity_stats(generations: &[Vec<TokenId>], inputs: &[Vec<TokenId>]) -> DiversityStats {
    assert_eq!(generations.len(), inputs.len(), "one input per generation");
    let mut unique_ngrams = [0usize; MAX_ORDER];
    let mut total_ngrams = [0usize; MAX_ORDER];
    let mut distinct_ratio = [0.0f64; MAX_ORDER];
    let mut input_overlap = [0.0f64; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let mut pool: HashSet<&[TokenId]> = HashSet::new();
        let mut total = 0usize;
        let mut overlap_sum = 0.0;
        let mut pairs = 0usize;
        for (g, x) in generations.iter().zip(inputs) {
            if g.len() < n {
                continue;
            }
            let windows = g.len() - n + 1;
            total += windows;
            for w in g.windows(n) {
                pool.insert(w);
            }
            let in_input: HashSet<&[TokenId]> = if x.len() >= n {
                x.windows(n).collect()
            } else {
                HashSet::new()
            };
            let copied = g.windows(n).filter(|w| in_input.contains(*w)).count();
            overlap_sum += copied as f64 / windows as f64;
            pairs += 1;
        }
        unique_ngrams[n - 1] = pool.len();
        total_ngrams[n - 1] = total;
        distinct_ratio[n - 1] = if total > 0 {
            pool.len() as f64 / total as f64
        } else {
            0.0
        };
        input_overlap[n - 1] = if pairs > 0 {
            overlap_sum / pairs as f64
        } else {
            0.0
        };
    }
    DiversityStats {
        unique_ngrams,
        total_ngrams,
        distinct_ratio,
        input_overlap,
    }
}

//! Corpus-level BLEU with pooled modified n-gram precisions.

use std::collections::HashMap;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

fn ngram_counts(ids: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut counts: HashMap<&[TokenId], u64> = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over token-id sequences, one reference per candidate.
///
/// Clipped n-gram matches and totals are pooled across the corpus before
/// taking precisions; the geometric mean over orders `1..=max_n` is scaled
/// by the brevity penalty `exp(1 - r/c)` when the candidate corpus is
/// shorter than the reference corpus. No smoothing: any pooled precision of
/// zero zeroes the score. An order with no candidate n-grams anywhere
/// (0/0) also scores zero.
pub fn corpus_bleu(
    candidates: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    max_n: usize,
) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::InvalidArgument("bleu order must be positive".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty corpus for bleu".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "bleu corpus mismatch: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let mut matched = 0u64;
        let mut total = 0u64;
        for (cand, refr) in candidates.iter().zip(references) {
            let cand_counts = ngram_counts(cand, n);
            if cand_counts.is_empty() {
                continue;
            }
            let ref_counts = ngram_counts(refr, n);
            for (gram, &c) in &cand_counts {
                total += c;
                matched += c.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }

    let mut score = (log_sum / max_n as f64).exp();
    if cand_len < ref_len {
        score *= (1.0 - ref_len as f64 / cand_len as f64).exp();
    }
    Ok(score)
}

/// BLEU of a single pair, as a one-sentence corpus.
pub fn sentence_bleu(candidate: &[TokenId], reference: &[TokenId], max_n: usize) -> Result<f64> {
    corpus_bleu(
        std::slice::from_ref(&candidate.to_vec()),
        std::slice::from_ref(&reference.to_vec()),
        max_n,
    )
}

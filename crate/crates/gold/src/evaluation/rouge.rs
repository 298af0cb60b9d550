//! ROUGE-1, ROUGE-2, and ROUGE-L F1 scores over token ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

fn f1(matched: f64, cand_total: f64, ref_total: f64) -> f64 {
    if matched == 0.0 {
        return 0.0;
    }
    let p = matched / cand_total;
    let r = matched / ref_total;
    2.0 * p * r / (p + r)
}

fn ngram_f1(cand: &[TokenId], refr: &[TokenId], n: usize) -> f64 {
    if cand.len() < n || refr.len() < n {
        return 0.0;
    }
    let mut ref_counts: HashMap<&[TokenId], u64> = HashMap::new();
    for w in refr.windows(n) {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[TokenId], u64> = HashMap::new();
    for w in cand.windows(n) {
        *cand_counts.entry(w).or_insert(0) += 1;
    }
    let matched: u64 = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    f1(
        matched as f64,
        (cand.len() - n + 1) as f64,
        (refr.len() - n + 1) as f64,
    )
}

fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    // Two-row DP; `prev[j]` is the LCS of a[..i] and b[..j].
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ai in a {
        for (j, &bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 variants of ROUGE-1, ROUGE-2 (clipped n-gram overlap) and ROUGE-L
/// (longest common subsequence). Empty inputs score zero.
pub fn rouge_scores(candidate: &[TokenId], reference: &[TokenId]) -> RougeScores {
    let rouge_l = if candidate.is_empty() || reference.is_empty() {
        0.0
    } else {
        f1(
            lcs_len(candidate, reference) as f64,
            candidate.len() as f64,
            reference.len() as f64,
        )
    };
    RougeScores {
        rouge1: ngram_f1(candidate, reference, 1),
        rouge2: ngram_f1(candidate, reference, 2),
        rouge_l,
    }
}

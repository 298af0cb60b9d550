//! How much corpus BLEU moves when only the decoding method changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TokenId, EOS};
use crate::decoding::{decode, DecodeMethod};
use crate::error::{Error, Result};
use crate::evaluation::bleu::corpus_bleu;
use crate::policy::Policy;
use crate::stats::derive_seed;

/// BLEU orders used throughout reporting.
pub const BLEU_ORDER: usize = 4;

/// Replicates per stochastic method; each gets its own derived seed.
const STOCHASTIC_REPS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub label: String,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub rows: Vec<SensitivityRow>,
    /// Largest minus smallest BLEU across the sweep.
    pub spread: f64,
}

impl SensitivityTable {
    pub fn bleu_for(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.bleu)
    }
}

pub fn strip_eos(ids: &[TokenId]) -> Vec<TokenId> {
    let mut out = ids.to_vec();
    if out.last() == Some(&EOS) {
        out.pop();
    }
    out
}

/// Corpus BLEU of `policy` decoded with each method over the same
/// examples. Stochastic methods are averaged over three replicate
/// decodes with derived seeds; deterministic methods run once.
pub fn decoding_sensitivity(
    policy: &Policy,
    examples: &[Example],
    methods: &[DecodeMethod],
    max_len: usize,
    seed: u64,
) -> Result<SensitivityTable> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no decoding methods given".into()));
    }
    let references: Vec<Vec<TokenId>> = examples.iter().map(|ex| strip_eos(ex.y.ids())).collect();
    let mut rows = Vec::with_capacity(methods.len());
    for (mi, method) in methods.iter().enumerate() {
        let reps = if method.is_stochastic() {
            STOCHASTIC_REPS
        } else {
            1
        };
        let mut total = 0.0;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[mi as u64, rep]));
            let mut candidates = Vec::with_capacity(examples.len());
            for ex in examples {
                let y = decode(policy, &ex.x, method, max_len, &mut rng)?;
                candidates.push(strip_eos(y.ids()));
            }
            total += corpus_bleu(&candidates, &references, BLEU_ORDER)?;
        }
        rows.push(SensitivityRow {
            label: method.label(),
            bleu: total / reps as f64,
        });
    }
    let max = rows.iter().map(|r| r.bleu).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.bleu).fold(f64::MAX, f64::min);
    Ok(SensitivityTable {
        rows,
        spread: max - min,
    })
}

/// The standard sweep: greedy, two beam widths, two top-k settings.
pub fn default_sweep() -> Vec<DecodeMethod> {
    vec![
        DecodeMethod::Greedy,
        DecodeMethod::Beam {
            width: 3,
            length_norm: false,
        },
        DecodeMethod::Beam {
            width: 5,
            length_norm: false,
        },
        DecodeMethod::TopK {
            k: 5,
            temperature: 1.0,
        },
        DecodeMethod::TopK {
            k: 20,
            temperature: 1.0,
        },
    ]
}

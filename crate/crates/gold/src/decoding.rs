//! Decoding a trained policy into sequences.
//!
//! All methods share the budget rule of the rest of the crate: one step
//! before `max_len` the only continuation is `EOS`, at no score cost, so
//! every decode terminates with a complete sequence inside the budget.
//!
//! Ties break deterministically everywhere — toward the lower token id, and
//! for whole beam hypotheses toward the shorter then lexicographically
//! smaller sequence — so decoding is reproducible across runs and platforms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sequence, TokenId, EOS};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::stats::sample_index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum DecodeMethod {
    Greedy,
    Beam {
        width: usize,
        #[serde(default)]
        length_norm: bool,
    },
    TopK {
        k: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

fn default_temperature() -> f64 {
    1.0
}

impl DecodeMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecodeMethod::Greedy => Ok(()),
            DecodeMethod::Beam { width, .. } => {
                if width == 0 {
                    Err(Error::Config("beam width must be at least 1".into()))
                } else {
                    Ok(())
                }
            }
            DecodeMethod::TopK { k, temperature } => {
                if k == 0 {
                    Err(Error::Config("top-k needs k at least 1".into()))
                } else if !(temperature > 0.0 && temperature.is_finite()) {
                    Err(Error::Config(format!("bad temperature {temperature}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Short stable name used as a report key.
    pub fn label(&self) -> String {
        match *self {
            DecodeMethod::Greedy => "greedy".into(),
            DecodeMethod::Beam { width, length_norm } => {
                if length_norm {
                    format!("beam{width}-norm")
                } else {
                    format!("beam{width}")
                }
            }
            DecodeMethod::TopK { k, temperature } => {
                if temperature == 1.0 {
                    format!("topk{k}")
                } else {
                    format!("topk{k}-t{temperature}")
                }
            }
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, DecodeMethod::TopK { .. })
    }
}

/// Decode one sequence. The generator is only consumed by stochastic
/// methods; greedy and beam never draw from it.
pub fn decode(
    policy: &Policy,
    x: &Sequence,
    method: &DecodeMethod,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Sequence> {
    method.validate()?;
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    match *method {
        DecodeMethod::Greedy => greedy(policy, x, max_len),
        DecodeMethod::Beam { width, length_norm } => beam(policy, x, width, length_norm, max_len),
        DecodeMethod::TopK { k, temperature } => top_k(policy, x, k, temperature, max_len, rng),
    }
}

fn greedy(policy: &Policy, x: &Sequence, max_len: usize) -> Result<Sequence> {
    let mut st = policy.start(x)?;
    let mut ids = Vec::new();
    loop {
        if ids.len() + 1 == max_len {
            ids.push(EOS);
            return Ok(Sequence::from_raw(ids));
        }
        let lp = policy.state_logprobs(&st);
        let mut best = EOS as usize;
        for tok in EOS as usize + 1..lp.len() {
            if lp[tok] > lp[best] {
                best = tok;
            }
        }
        let tok = best as TokenId;
        ids.push(tok);
        if tok == EOS {
            return Ok(Sequence::from_raw(ids));
        }
        st = policy.advance(&st, tok)?;
    }
}

struct Hypothesis {
    ids: Vec<TokenId>,
    state: crate::policy::StepState,
    score: f64,
}

fn beam(
    policy: &Policy,
    x: &Sequence,
    width: usize,
    length_norm: bool,
    max_len: usize,
) -> Result<Sequence> {
    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        state: policy.start(x)?,
        score: 0.0,
    }];
    let mut pool: Vec<(Vec<TokenId>, f64)> = Vec::new();

    for step in 0.. {
        if live.is_empty() {
            break;
        }
        if step + 1 == max_len {
            // Forced EOS completes every survivor at no cost.
            for h in live.drain(..) {
                let mut ids = h.ids;
                ids.push(EOS);
                pool.push((ids, h.score));
            }
            break;
        }
        // Without length normalization scores only fall with length, so once
        // a completed hypothesis beats every live one nothing can improve.
        if !length_norm {
            let best_done = pool
                .iter()
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let best_live = live
                .iter()
                .map(|h| h.score)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }

        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let lp = policy.state_logprobs(&h.state);
            for (tok, &step_lp) in lp.iter().enumerate().skip(EOS as usize) {
                let score = h.score + step_lp;
                if score > f64::NEG_INFINITY {
                    candidates.push((score, i, tok as TokenId));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite scores")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(width);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, i, tok) in candidates {
            let mut ids = live[i].ids.clone();
            ids.push(tok);
            if tok == EOS {
                pool.push((ids, score));
            } else {
                next.push(Hypothesis {
                    state: policy.advance(&live[i].state, tok)?,
                    ids,
                    score,
                });
            }
        }
        live = next;
    }

    let best = pool
        .into_iter()
        .max_by(|(ids_a, score_a), (ids_b, score_b)| {
            let key_a = if length_norm {
                score_a / ids_a.len() as f64
            } else {
                *score_a
            };
            let key_b = if length_norm {
                score_b / ids_b.len() as f64
            } else {
                *score_b
            };
            key_a
                .partial_cmp(&key_b)
                .expect("finite scores")
                .then(ids_b.len().cmp(&ids_a.len()))
                .then_with(|| ids_b.cmp(ids_a))
        })
        .expect("the budget forces at least one completion");
    Ok(Sequence::from_raw(best.0))
}

fn top_k(
    policy: &Policy,
    x: &Sequence,
    k: usize,
    temperature: f64,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Sequence> {
    let mut st = policy.start(x)?;
    let mut ids = Vec::new();
    loop {
        if ids.len() + 1 == max_len {
            ids.push(EOS);
            return Ok(Sequence::from_raw(ids));
        }
        let lp = policy.state_logprobs(&st);
        let mut ranked: Vec<(TokenId, f64)> = (EOS as usize..lp.len())
            .map(|t| (t as TokenId, lp[t]))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("no NaN").then(a.0.cmp(&b.0)));
        ranked.truncate(k);

        // Temperature acts on the kept logits, then renormalize.
        let max_lp = ranked[0].1;
        let probs: Vec<f64> = ranked
            .iter()
            .map(|(_, l)| ((l - max_lp) / temperature).exp())
            .collect();
        let tok = ranked[sample_index(&probs, rng)].0;
        ids.push(tok);
        if tok == EOS {
            return Ok(Sequence::from_raw(ids));
        }
        st = policy.advance(&st, tok)?;
    }
}

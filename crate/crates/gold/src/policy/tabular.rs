//! Count-free m-gram softmax tables.
//!
//! One logit row per (context class, window of the last `order` symbols),
//! one column per vocabulary id. Windows are encoded like the data process
//! encodes its conditioning state — `BOS` maps to 0 and real token `t` to
//! `t - RESERVED + 1` — so an order-2 table can represent the generating
//! chain exactly, while order 1 is structurally misspecified on it.

use serde::{Deserialize, Serialize};

use crate::corpus::{context_class, Sequence, TokenId, BOS, RESERVED};
use crate::error::{Error, Result};
use crate::policy::{log_softmax_tail, softmax_tail, StepState};

/// Hard ceiling on table entries; anything bigger is a config mistake.
const MAX_PARAMS: u128 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    order: usize,
    num_classes: usize,
    vocab_size: usize,
    params: Vec<f64>,
}

impl TabularPolicy {
    /// Zero-initialized table: every row starts uniform over the emittable ids.
    pub fn new(order: usize, num_classes: usize, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("tabular order must be at least 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if vocab_size <= RESERVED {
            return Err(Error::Config(format!(
                "vocab size {vocab_size} leaves no real tokens"
            )));
        }
        let symbols = (vocab_size - RESERVED + 1) as u128;
        let mut total: u128 = num_classes as u128 * vocab_size as u128;
        for _ in 0..order {
            total = total.saturating_mul(symbols);
            if total > MAX_PARAMS {
                return Err(Error::Config(format!(
                    "tabular table of order {order} over {vocab_size} ids exceeds \
                     {MAX_PARAMS} parameters"
                )));
            }
        }
        Ok(TabularPolicy {
            order,
            num_classes,
            vocab_size,
            params: vec![0.0; total as usize],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn expected_params(&self) -> usize {
        let symbols = self.vocab_size - RESERVED + 1;
        self.num_classes * symbols.pow(self.order as u32) * self.vocab_size
    }

    fn encode(&self, tok: TokenId) -> usize {
        if tok == BOS {
            0
        } else {
            tok as usize - RESERVED + 1
        }
    }

    fn num_symbols(&self) -> usize {
        self.vocab_size - RESERVED + 1
    }

    fn row_base(&self, class: usize, window: &[usize]) -> usize {
        debug_assert_eq!(window.len(), self.order);
        let mut key = 0usize;
        for &sym in window {
            key = key * self.num_symbols() + sym;
        }
        (class * self.num_symbols().pow(self.order as u32) + key) * self.vocab_size
    }

    /// The context enters only through its class; the window tracks the
    /// generated tokens and opens all-`BOS`, exactly like the data process.
    pub(crate) fn start(&self, x: &Sequence) -> StepState {
        StepState::Tabular {
            class: context_class(x, self.num_classes),
            window: vec![self.encode(BOS); self.order],
        }
    }

    pub(crate) fn advance_window(&self, window: &[usize], tok: TokenId) -> Vec<usize> {
        let mut next = window[1..].to_vec();
        next.push(self.encode(tok));
        next
    }

    pub(crate) fn logprobs(&self, class: usize, window: &[usize]) -> Vec<f64> {
        let base = self.row_base(class, window);
        log_softmax_tail(&self.params[base..base + self.vocab_size])
    }

    pub(crate) fn accumulate_grad(
        &self,
        x: &Sequence,
        y: &Sequence,
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let StepState::Tabular { class, mut window } = self.start(x) else {
            unreachable!()
        };
        for (t, &tok) in y.ids().iter().enumerate() {
            let w = scale * weights[t];
            if w != 0.0 {
                let base = self.row_base(class, &window);
                let probs = softmax_tail(&self.params[base..base + self.vocab_size]);
                for (j, &p) in probs.iter().enumerate().skip(crate::corpus::EOS as usize) {
                    let indicator = if j == tok as usize { 1.0 } else { 0.0 };
                    out[base + j] += w * (indicator - p);
                }
            }
            if t + 1 < y.len() {
                window = self.advance_window(&window, tok);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::policy::Policy;

    fn seq(ids: &[TokenId]) -> Sequence {
        Sequence::from_raw(ids.to_vec())
    }

    #[test]
    fn constructor_validates_dimensions() {
        assert!(TabularPolicy::new(0, 1, 6).is_err());
        assert!(TabularPolicy::new(2, 0, 6).is_err());
        assert!(TabularPolicy::new(2, 1, 3).is_err());
        assert!(TabularPolicy::new(8, 4, 40).is_err()); // astronomically large table
        assert!(TabularPolicy::new(2, 1, 4).is_ok());
    }

    #[test]
    fn param_count_matches_table_shape() {
        // 3 real tokens -> 4 window symbols; order 2 -> 16 rows per class.
        let p = TabularPolicy::new(2, 2, 6).unwrap();
        assert_eq!(p.params().len(), 2 * 16 * 6);
        assert_eq!(p.params().len(), p.expected_params());
    }

    #[test]
    fn start_window_ignores_context_tokens() {
        let p = TabularPolicy::new(2, 1, 7).unwrap();
        for x in [seq(&[5]), seq(&[3, 4, 5])] {
            let StepState::Tabular { window, .. } = p.start(&x) else {
                unreachable!()
            };
            assert_eq!(window, vec![0, 0]);
        }
    }

    #[test]
    fn advance_shifts_the_window() {
        let p = TabularPolicy::new(2, 1, 7).unwrap();
        assert_eq!(p.advance_window(&[0, 1], 4), vec![1, 2]);
        assert_eq!(p.advance_window(&[1, 2], 3), vec![2, 1]);
    }

    #[test]
    fn classes_select_disjoint_rows() {
        let classes = 4;
        let mut p = TabularPolicy::new(1, classes, 5).unwrap();
        // Give class blocks distinct logits on the same window row.
        let block = p.params().len() / classes;
        let (row, col) = (1, 3); // window [tok 3], col 3
        for c in 0..classes {
            p.params_mut()[c * block + row * 5 + col] = c as f64;
        }
        let policy = Policy::Tabular(p);
        let mut seen = std::collections::BTreeSet::new();
        for tok in [3u32, 4] {
            for len in 1..4 {
                let x = seq(&vec![tok; len]);
                let lp = policy.next_token_logprobs(&x, &[3]).unwrap();
                seen.insert(format!("{:.12}", lp[3]));
            }
        }
        assert!(
            seen.len() > 1,
            "different contexts should hit different rows"
        );
    }

    #[test]
    fn scaled_accumulation_is_linear() {
        let mut p = TabularPolicy::new(2, 1, 6).unwrap();
        for (i, w) in p.params_mut().iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let policy = Policy::Tabular(p);
        let x = seq(&[3]);
        let y = seq(&[4, 5, EOS]);
        let weights = [0.5, -1.0, 2.0];
        let g1 = policy.weighted_logprob_grad(&x, &y, &weights).unwrap();
        let mut g2 = vec![0.0; policy.num_params()];
        policy
            .accumulate_weighted_logprob_grad(&x, &y, &weights, 2.0, &mut g2)
            .unwrap();
        for (a, b) in g1.as_slice().iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_preserves_shape() {
        let mut p = TabularPolicy::new(2, 3, 6).unwrap();
        p.params_mut()[17] = -0.75;
        let json = serde_json::to_string(&p).unwrap();
        let back: TabularPolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.order(), 2);
        assert_eq!(back.num_classes(), 3);
    }
}

//! Parametric sequence policies with hand-written gradients.
//!
//! Two families share one interface: tabular m-gram softmax rows and a small
//! Elman recurrent network. Both condition on the context only through its
//! class, emit distributions over the full vocabulary with `PAD` and `BOS`
//! masked to -inf, and keep all parameters in a single flat `f64` vector so
//! optimizers and finite-difference checks stay family-agnostic.
//!
//! Sequence-level operations treat a generation budget `max_len` the same way
//! the data process does: one step before the cap the next token is forced to
//! `EOS` at probability one, so the induced distribution over complete
//! sequences is proper and `sample_sequence` draws from exactly that
//! distribution.

mod optim;
mod rnn;
mod tabular;

pub use optim::{apply_update, OptAlgo, Optimizer, OptimizerConfig};
pub use rnn::RnnPolicy;
pub use tabular::TabularPolicy;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sequence, TokenId, EOS, RESERVED};
use crate::error::{Error, Result};
use crate::stats::sample_index;

/// Flat gradient aligned with `Policy::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add_scaled(&mut self, other: &GradVector, scale: f64) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.0 {
            *a *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Policy {
    Tabular(TabularPolicy),
    Rnn(RnnPolicy),
}

/// Incremental decoding state; cheap to clone so beam search can branch.
#[derive(Debug, Clone)]
pub(crate) enum StepState {
    Tabular { class: usize, window: Vec<usize> },
    Rnn { class: usize, hidden: Vec<f64> },
}

impl Policy {
    pub fn family(&self) -> &'static str {
        match self {
            Policy::Tabular(_) => "tabular",
            Policy::Rnn(_) => "rnn",
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.vocab_size(),
            Policy::Rnn(p) => p.vocab_size(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.num_classes(),
            Policy::Rnn(p) => p.num_classes(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Policy::Tabular(p) => p.params(),
            Policy::Rnn(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Policy::Tabular(p) => p.params_mut(),
            Policy::Rnn(p) => p.params_mut(),
        }
    }

    pub(crate) fn start(&self, x: &Sequence) -> Result<StepState> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty context".into()));
        }
        Ok(match self {
            Policy::Tabular(p) => p.start(x),
            Policy::Rnn(p) => p.start(x),
        })
    }

    pub(crate) fn state_logprobs(&self, st: &StepState) -> Vec<f64> {
        match (self, st) {
            (Policy::Tabular(p), StepState::Tabular { class, window }) => {
                p.logprobs(*class, window)
            }
            (Policy::Rnn(p), StepState::Rnn { hidden, .. }) => p.logprobs(hidden),
            _ => unreachable!("state family mismatch"),
        }
    }

    pub(crate) fn advance(&self, st: &StepState, tok: TokenId) -> Result<StepState> {
        check_emittable(tok, self.vocab_size())?;
        if tok == EOS {
            return Err(Error::InvalidArgument("cannot advance past EOS".into()));
        }
        Ok(match (self, st) {
            (Policy::Tabular(p), StepState::Tabular { class, window }) => StepState::Tabular {
                class: *class,
                window: p.advance_window(window, tok),
            },
            (Policy::Rnn(p), StepState::Rnn { class, hidden }) => StepState::Rnn {
                class: *class,
                hidden: p.cell(tok, hidden),
            },
            _ => unreachable!("state family mismatch"),
        })
    }

    /// Log-probabilities of the next token after `prefix`, over the full
    /// vocabulary. `PAD`/`BOS` are -inf; the rest exponentiates to 1.
    pub fn next_token_logprobs(&self, x: &Sequence, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut st = self.start(x)?;
        for &tok in prefix {
            st = self.advance(&st, tok)?;
        }
        Ok(self.state_logprobs(&st))
    }

    /// Per-step log-probabilities of the realized tokens of complete `y`.
    pub fn step_logprobs(&self, x: &Sequence, y: &Sequence) -> Result<Vec<f64>> {
        require_complete(y)?;
        let mut st = self.start(x)?;
        let mut out = Vec::with_capacity(y.len());
        for (t, &tok) in y.ids().iter().enumerate() {
            check_emittable(tok, self.vocab_size())?;
            out.push(self.state_logprobs(&st)[tok as usize]);
            if t + 1 < y.len() {
                st = self.advance(&st, tok)?;
            }
        }
        Ok(out)
    }

    /// Model log-probability of complete `y` given `x` (no length cap).
    pub fn sequence_logprob(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        Ok(self.step_logprobs(x, y)?.iter().sum())
    }

    /// Log-probability of `y` under the budgeted generation distribution:
    /// the final step is free when it is the forced EOS at the cap, and
    /// sequences over the cap have probability zero.
    pub fn sequence_logprob_capped(
        &self,
        x: &Sequence,
        y: &Sequence,
        max_len: usize,
    ) -> Result<f64> {
        require_complete(y)?;
        if y.len() > max_len {
            return Ok(f64::NEG_INFINITY);
        }
        let steps = self.step_logprobs(x, y)?;
        let charged = if y.len() == max_len {
            &steps[..steps.len() - 1]
        } else {
            &steps[..]
        };
        Ok(charged.iter().sum())
    }

    /// Ancestral sampling; stops at `EOS`, which is forced one step before
    /// `max_len` so the result always fits the budget.
    pub fn sample_sequence(
        &self,
        x: &Sequence,
        rng: &mut impl Rng,
        max_len: usize,
    ) -> Result<Sequence> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        let mut st = self.start(x)?;
        let mut ids = Vec::new();
        loop {
            if ids.len() + 1 == max_len {
                ids.push(EOS);
                return Ok(Sequence::from_raw(ids));
            }
            let probs: Vec<f64> = self.state_logprobs(&st).iter().map(|lp| lp.exp()).collect();
            let tok = sample_index(&probs, rng) as TokenId;
            ids.push(tok);
            if tok == EOS {
                return Ok(Sequence::from_raw(ids));
            }
            st = self.advance(&st, tok)?;
        }
    }

    /// Gradient of `sum_t weights[t] * log pi(y_t | x, y_<t>)` with respect to
    /// the flat parameters. Weights are plain constants: nothing
    /// differentiates through them.
    pub fn weighted_logprob_grad(
        &self,
        x: &Sequence,
        y: &Sequence,
        weights: &[f64],
    ) -> Result<GradVector> {
        let mut grad = GradVector::zeros(self.num_params());
        self.accumulate_weighted_logprob_grad(x, y, weights, 1.0, &mut grad.0)?;
        Ok(grad)
    }

    /// As `weighted_logprob_grad`, but adds `scale *` the gradient into `out`
    /// without allocating. Batch loops use this.
    pub fn accumulate_weighted_logprob_grad(
        &self,
        x: &Sequence,
        y: &Sequence,
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        require_complete(y)?;
        if weights.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} steps",
                weights.len(),
                y.len()
            )));
        }
        if out.len() != self.num_params() {
            return Err(Error::InvalidArgument(
                "gradient buffer length mismatch".into(),
            ));
        }
        for &tok in y.ids() {
            check_emittable(tok, self.vocab_size())?;
        }
        self.start(x)?;
        match self {
            Policy::Tabular(p) => p.accumulate_grad(x, y, weights, scale, out),
            Policy::Rnn(p) => p.accumulate_grad(x, y, weights, scale, out),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Policy> {
        if !path.exists() {
            return Err(Error::MissingPrereq(path.to_owned()));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let policy: Policy = serde_json::from_str(&raw).map_err(|e| Error::json(path, e))?;
        policy.validate()?;
        Ok(policy)
    }

    /// Structural consistency of a deserialized policy: the flat parameter
    /// vector must match the declared dimensions, and every entry be finite.
    pub fn validate(&self) -> Result<()> {
        let expected = match self {
            Policy::Tabular(p) => p.expected_params(),
            Policy::Rnn(p) => p.expected_params(),
        };
        if self.params().len() != expected {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, dimensions imply {expected}",
                self.params().len()
            )));
        }
        if let Some(bad) = self.params().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint parameter is {bad}")));
        }
        Ok(())
    }
}

fn require_complete(y: &Sequence) -> Result<()> {
    if !y.is_complete() {
        return Err(Error::InvalidArgument(
            "sequence operation needs a complete (EOS-terminated) sequence".into(),
        ));
    }
    Ok(())
}

fn check_emittable(tok: TokenId, vocab_size: usize) -> Result<()> {
    if (tok as usize) >= vocab_size {
        return Err(Error::InvalidArgument(format!(
            "token id {tok} outside vocab of size {vocab_size}"
        )));
    }
    if (tok as usize) < RESERVED && tok != EOS {
        return Err(Error::InvalidArgument(format!(
            "reserved id {tok} cannot be emitted"
        )));
    }
    Ok(())
}

/// Log-softmax over the maskable layout: indices 0 (`PAD`) and 1 (`BOS`) are
/// forced to -inf, the tail starting at `EOS` is normalized.
pub(crate) fn log_softmax_tail(logits: &[f64]) -> Vec<f64> {
    let tail = &logits[EOS as usize..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + tail.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let mut out = vec![f64::NEG_INFINITY; logits.len()];
    for (i, &l) in tail.iter().enumerate() {
        out[EOS as usize + i] = l - lse;
    }
    out
}

/// Softmax probabilities over the maskable layout (`PAD`/`BOS` get 0).
pub(crate) fn softmax_tail(logits: &[f64]) -> Vec<f64> {
    log_softmax_tail(logits)
        .iter()
        .map(|&lp| lp.exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BOS, PAD};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[TokenId]) -> Sequence {
        Sequence::from_raw(ids.to_vec())
    }

    fn policies_for_tests() -> Vec<Policy> {
        let mut out = vec![
            Policy::Tabular(TabularPolicy::new(2, 1, 7).unwrap()),
            Policy::Tabular(TabularPolicy::new(3, 2, 6).unwrap()),
            Policy::Rnn(RnnPolicy::new(2, 7, 3, 4, 42).unwrap()),
        ];
        // Randomize the tabular entries too; zeros are a special case.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in out.iter_mut() {
            if matches!(p, Policy::Tabular(_)) {
                for w in p.params_mut() {
                    *w = rng.gen_range(-1.5..1.5);
                }
            }
        }
        out
    }

    #[test]
    fn zero_init_tabular_is_uniform() {
        let p = Policy::Tabular(TabularPolicy::new(2, 1, 6).unwrap());
        let lp = p.next_token_logprobs(&seq(&[3]), &[]).unwrap();
        let expect = -(4.0_f64).ln(); // EOS + 3 real tokens
        assert_eq!(lp[PAD as usize], f64::NEG_INFINITY);
        assert_eq!(lp[BOS as usize], f64::NEG_INFINITY);
        for &v in &lp[EOS as usize..] {
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        }
    }

    #[test]
    fn logprobs_normalize() {
        for p in policies_for_tests() {
            let lp = p.next_token_logprobs(&seq(&[3, 4]), &[4, 3]).unwrap();
            let total: f64 = lp[EOS as usize..].iter().map(|l| l.exp()).sum();
            assert!(
                (total - 1.0).abs() < 1e-10,
                "{}: normalizes to {total}",
                p.family()
            );
        }
    }

    #[test]
    fn prefix_validation() {
        let p = Policy::Tabular(TabularPolicy::new(1, 2, 6).unwrap());
        assert!(p.next_token_logprobs(&seq(&[3]), &[EOS]).is_err());
        assert!(p.next_token_logprobs(&seq(&[3]), &[99]).is_err());
        assert!(p.next_token_logprobs(&seq(&[]), &[]).is_err());
    }

    #[test]
    fn sequence_logprob_uniform_hand_value() {
        let p = Policy::Tabular(TabularPolicy::new(2, 1, 6).unwrap());
        let y = seq(&[3, 4, EOS]);
        let lp = p.sequence_logprob(&seq(&[5]), &y).unwrap();
        let expect = 3.0 * (-(4.0_f64).ln());
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn capped_logprob_skips_forced_step() {
        for p in policies_for_tests() {
            let x = seq(&[3]);
            let y = seq(&[3, 4, EOS]);
            let free = p.sequence_logprob(&x, &y).unwrap();
            let capped = p.sequence_logprob_capped(&x, &y, 3).unwrap();
            let steps = p.step_logprobs(&x, &y).unwrap();
            assert!((capped - (free - steps[2])).abs() < 1e-12);
            assert_eq!(
                p.sequence_logprob_capped(&x, &y, 2).unwrap(),
                f64::NEG_INFINITY
            );
            assert_eq!(p.sequence_logprob_capped(&x, &y, 4).unwrap(), free);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_capped() {
        for p in policies_for_tests() {
            let x = seq(&[3, 4]);
            let mut r1 = ChaCha8Rng::seed_from_u64(5);
            let mut r2 = ChaCha8Rng::seed_from_u64(5);
            let a = p.sample_sequence(&x, &mut r1, 10).unwrap();
            let b = p.sample_sequence(&x, &mut r2, 10).unwrap();
            assert_eq!(a, b, "{}: same seed, same sample", p.family());
            for _ in 0..200 {
                let y = p.sample_sequence(&x, &mut r1, 4).unwrap();
                assert!(y.is_complete() && y.len() <= 4);
            }
        }
    }

    #[test]
    fn first_step_frequencies_match_logprobs() {
        for p in policies_for_tests() {
            let x = seq(&[4]);
            let lp = p.next_token_logprobs(&x, &[]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let n = 50_000;
            let mut counts = vec![0usize; p.vocab_size()];
            for _ in 0..n {
                let y = p.sample_sequence(&x, &mut rng, 30).unwrap();
                counts[y.ids()[0] as usize] += 1;
            }
            for tok in EOS as usize..p.vocab_size() {
                let prob = lp[tok].exp();
                let freq = counts[tok] as f64 / n as f64;
                let sigma = (prob * (1.0 - prob) / n as f64).sqrt();
                assert!(
                    (freq - prob).abs() <= 3.0 * sigma + 1e-9,
                    "{}: token {tok} freq {freq} vs prob {prob}",
                    p.family()
                );
            }
        }
    }

    #[test]
    fn zero_weights_zero_gradient() {
        for p in policies_for_tests() {
            let g = p
                .weighted_logprob_grad(&seq(&[3]), &seq(&[4, EOS]), &[0.0, 0.0])
                .unwrap();
            assert!(g.as_slice().iter().all(|&v| v == 0.0), "{}", p.family());
        }
    }

    #[test]
    fn one_step_uniform_gradient_hand_value() {
        // One real token: outputs are {EOS, w0}, uniform at zero init.
        let p = Policy::Tabular(TabularPolicy::new(1, 1, 4).unwrap());
        let g = p
            .weighted_logprob_grad(&seq(&[3]), &seq(&[EOS]), &[1.0])
            .unwrap();
        let expect_at = |tok: usize| if tok == EOS as usize { 0.5 } else { -0.5 };
        let mut nonzero = 0;
        for (i, &v) in g.as_slice().iter().enumerate() {
            let tok = i % 4;
            if v != 0.0 {
                nonzero += 1;
                assert!((v - expect_at(tok)).abs() < 1e-12, "param {i}: {v}");
            }
        }
        assert_eq!(nonzero, 2, "exactly the observed row moves");
    }

    fn finite_difference(p: &Policy, x: &Sequence, y: &Sequence, h: f64) -> Vec<f64> {
        let mut fd = Vec::with_capacity(p.num_params());
        let mut probe = p.clone();
        for i in 0..p.num_params() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = probe.sequence_logprob(x, y).unwrap();
            probe.params_mut()[i] = orig - h;
            let down = probe.sequence_logprob(x, y).unwrap();
            probe.params_mut()[i] = orig;
            fd.push((up - down) / (2.0 * h));
        }
        fd
    }

    #[test]
    fn unit_weight_gradient_matches_finite_differences() {
        for p in policies_for_tests() {
            let x = seq(&[3, 4]);
            let y = seq(&[4, 3, EOS]);
            let g = p.weighted_logprob_grad(&x, &y, &[1.0, 1.0, 1.0]).unwrap();
            let fd = finite_difference(&p, &x, &y, 1e-5);
            let tol = if p.family() == "tabular" { 1e-4 } else { 1e-3 };
            for (i, (&a, &b)) in g.as_slice().iter().zip(&fd).enumerate() {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                assert!(rel <= tol, "{}: param {i}: {a} vs fd {b}", p.family());
            }
        }
    }

    #[test]
    fn rnn_init_is_seeded() {
        let a = RnnPolicy::new(2, 6, 3, 4, 7).unwrap();
        let b = RnnPolicy::new(2, 6, 3, 4, 7).unwrap();
        let c = RnnPolicy::new(2, 6, 3, 4, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert!(a.params().iter().all(|&w| (-0.1..0.1).contains(&w)));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        for p in policies_for_tests() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ckpt.json");
            p.save(&path).unwrap();
            let back = Policy::load(&path).unwrap();
            assert_eq!(back.num_params(), p.num_params());
            for (a, b) in p.params().iter().zip(back.params()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{}", p.family());
            }
            let x = seq(&[3]);
            let lp_a = p.next_token_logprobs(&x, &[]).unwrap();
            let lp_b = back.next_token_logprobs(&x, &[]).unwrap();
            assert_eq!(lp_a, lp_b);
        }
    }

    #[test]
    fn load_missing_checkpoint_names_path() {
        let err = Policy::load(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.json"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_policies_normalize_and_match_fd(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = if seed % 2 == 0 {
                let mut t = TabularPolicy::new(2, (seed % 2 + 1) as usize, 5).unwrap();
                for w in t.params_mut() { *w = rng.gen_range(-2.0..2.0); }
                Policy::Tabular(t)
            } else {
                Policy::Rnn(RnnPolicy::new(2, 5, 2, 3, seed).unwrap())
            };
            let x = seq(&[3]);
            let lp = p.next_token_logprobs(&x, &[3, 4]).unwrap();
            let total: f64 = lp[EOS as usize..].iter().map(|l| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);

            let y = seq(&[4, EOS]);
            let g = p.weighted_logprob_grad(&x, &y, &[1.0, 1.0]).unwrap();
            let fd = finite_difference(&p, &x, &y, 1e-5);
            let tol = if p.family() == "tabular" { 1e-4 } else { 1e-3 };
            for (a, b) in g.as_slice().iter().zip(&fd) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                prop_assert!(rel <= tol, "{} vs {}", a, b);
            }
        }
    }
}

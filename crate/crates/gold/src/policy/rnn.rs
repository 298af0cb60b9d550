//! Small Elman recurrent policy.
//!
//! The context selects a learned initial hidden state by class; the network
//! then consumes `BOS` followed by the generated tokens. Gradients come from
//! backpropagation through time written out by hand — the whole model is a
//! few dense mat-vecs, so no ML runtime is warranted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{context_class, Sequence, TokenId, BOS, EOS, RESERVED};
use crate::error::{Error, Result};
use crate::policy::{log_softmax_tail, softmax_tail, StepState};

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnPolicy {
    num_classes: usize,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Offsets of the parameter blocks inside the flat vector, in layout order:
/// token embeddings, input weights, recurrent weights, hidden bias, output
/// weights, output bias, per-class initial hidden states.
struct Layout {
    embed: usize,
    w_in: usize,
    w_rec: usize,
    bias: usize,
    w_out: usize,
    out_bias: usize,
    class_init: usize,
    total: usize,
}

impl RnnPolicy {
    pub fn new(
        num_classes: usize,
        vocab_size: usize,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(
                "rnn dimensions must all be at least 1".into(),
            ));
        }
        if vocab_size <= RESERVED {
            return Err(Error::Config(format!(
                "vocab size {vocab_size} leaves no real tokens"
            )));
        }
        let mut this = RnnPolicy {
            num_classes,
            vocab_size,
            embed_dim,
            hidden_dim,
            params: Vec::new(),
        };
        let total = this.layout().total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        this.params = (0..total)
            .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        Ok(this)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        let (v, e, h, c) = (
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.num_classes,
        );
        let embed = 0;
        let w_in = embed + v * e;
        let w_rec = w_in + h * e;
        let bias = w_rec + h * h;
        let w_out = bias + h;
        let out_bias = w_out + v * h;
        let class_init = out_bias + v;
        Layout {
            embed,
            w_in,
            w_rec,
            bias,
            w_out,
            out_bias,
            class_init,
            total: class_init + c * h,
        }
    }

    pub(crate) fn expected_params(&self) -> usize {
        self.layout().total
    }

    fn embed_row(&self, tok: TokenId) -> &[f64] {
        let l = self.layout();
        let base = l.embed + tok as usize * self.embed_dim;
        &self.params[base..base + self.embed_dim]
    }

    fn class_row(&self, class: usize) -> &[f64] {
        let l = self.layout();
        let base = l.class_init + class * self.hidden_dim;
        &self.params[base..base + self.hidden_dim]
    }

    /// One recurrence step: `tanh(W_in e(tok) + W_rec h + b)`.
    pub(crate) fn cell(&self, tok: TokenId, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let e = self.embed_row(tok);
        let mut out = Vec::with_capacity(self.hidden_dim);
        for i in 0..self.hidden_dim {
            let mut pre = self.params[l.bias + i];
            let win = &self.params[l.w_in + i * self.embed_dim..];
            for (k, &ek) in e.iter().enumerate() {
                pre += win[k] * ek;
            }
            let wrec = &self.params[l.w_rec + i * self.hidden_dim..];
            for (k, &hk) in h.iter().enumerate() {
                pre += wrec[k] * hk;
            }
            out.push(pre.tanh());
        }
        out
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut out = Vec::with_capacity(self.vocab_size);
        for j in 0..self.vocab_size {
            let mut z = self.params[l.out_bias + j];
            let row = &self.params[l.w_out + j * self.hidden_dim..];
            for (k, &hk) in h.iter().enumerate() {
                z += row[k] * hk;
            }
            out.push(z);
        }
        out
    }

    pub(crate) fn logprobs(&self, h: &[f64]) -> Vec<f64> {
        log_softmax_tail(&self.logits(h))
    }

    pub(crate) fn start(&self, x: &Sequence) -> StepState {
        let class = context_class(x, self.num_classes);
        StepState::Rnn {
            class,
            hidden: self.cell(BOS, self.class_row(class)),
        }
    }

    pub(crate) fn accumulate_grad(
        &self,
        x: &Sequence,
        y: &Sequence,
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let l = self.layout();
        let (hd, ed) = (self.hidden_dim, self.embed_dim);
        let steps = y.len();
        let class = context_class(x, self.num_classes);

        // Forward pass, keeping every hidden state for the backward sweep.
        // Step t consumes input a_t and its state scores token y_t.
        let mut inputs = Vec::with_capacity(steps);
        inputs.push(BOS);
        inputs.extend(y.ids()[..steps - 1].iter().copied());
        let mut hiddens: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut state = self.class_row(class).to_vec();
        for &a in &inputs {
            state = self.cell(a, &state);
            hiddens.push(state.clone());
        }

        let mut dh = vec![0.0; hd];
        for t in (0..steps).rev() {
            let h = &hiddens[t];
            let w = scale * weights[t];
            if w != 0.0 {
                let probs = softmax_tail(&self.logits(h));
                let target = y.ids()[t] as usize;
                for j in EOS as usize..self.vocab_size {
                    let dz = w * ((j == target) as usize as f64 - probs[j]);
                    out[l.out_bias + j] += dz;
                    let row = l.w_out + j * hd;
                    for k in 0..hd {
                        out[row + k] += dz * h[k];
                        dh[k] += dz * self.params[row + k];
                    }
                }
            }

            // Through the tanh, then onto this step's inputs.
            let prev: &[f64] = if t == 0 {
                self.class_row(class)
            } else {
                &hiddens[t - 1]
            };
            let emb = self.embed_row(inputs[t]);
            let mut dprev = vec![0.0; hd];
            for i in 0..hd {
                let dpre = dh[i] * (1.0 - h[i] * h[i]);
                if dpre == 0.0 {
                    continue;
                }
                out[l.bias + i] += dpre;
                let win = l.w_in + i * ed;
                for k in 0..ed {
                    out[win + k] += dpre * emb[k];
                    out[l.embed + inputs[t] as usize * ed + k] += dpre * self.params[win + k];
                }
                let wrec = l.w_rec + i * hd;
                for k in 0..hd {
                    out[wrec + k] += dpre * prev[k];
                    dprev[k] += dpre * self.params[wrec + k];
                }
            }
            dh = dprev;
        }
        for (k, &d) in dh.iter().enumerate() {
            out[l.class_init + class * hd + k] += d;
        }
        Ok(())
    }
}

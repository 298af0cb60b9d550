//! The synthetic data-generating process: a context-conditioned order-2
//! Markov chain with explicit transition tables.
//!
//! Each context class owns one table row per (prev2, prev1) pair, where the
//! previous tokens are BOS-padded at the start. Rows are distributions over
//! `EOS` plus the real tokens. Sequences are capped at `max_len` total tokens
//! (including `EOS`): one step before the cap the conditional is forced to
//! `EOS`, which makes the distribution over complete sequences proper — the
//! probabilities of all sequences up to `max_len` sum to one. Away from the
//! cap the conditional depends only on the context class and the last two
//! tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    context_class, Dataset, Example, Sequence, Split, TokenId, Vocab, BOS, EOS, RESERVED,
};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::stats::sample_index;

/// Tolerance for row-sum and floor validation.
const ROW_TOL: f64 = 1e-12;

/// Output layout inside a transition row: index 0 is `EOS`, index `1 + i` is
/// the i-th real token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    vocab: Vocab,
    num_classes: usize,
    eos_floor: f64,
    max_len: usize,
    transitions: Vec<Vec<Vec<f64>>>,
}

impl OracleSpec {
    /// Validates shapes, nonnegativity, row sums (1 within 1e-12) and the EOS
    /// floor.
    pub fn new(
        vocab: Vocab,
        num_classes: usize,
        eos_floor: f64,
        max_len: usize,
        transitions: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument(
                "num_classes must be positive".into(),
            ));
        }
        if max_len < 1 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&eos_floor) {
            return Err(Error::InvalidArgument("eos_floor must be in [0, 1)".into()));
        }
        let v = vocab.num_tokens();
        let keys = (v + 1) * (v + 1);
        if transitions.len() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "expected {num_classes} transition tables, got {}",
                transitions.len()
            )));
        }
        for (c, table) in transitions.iter().enumerate() {
            if table.len() != keys {
                return Err(Error::InvalidArgument(format!(
                    "class {c}: expected {keys} rows, got {}",
                    table.len()
                )));
            }
            for (k, row) in table.iter().enumerate() {
                if row.len() != v + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} row {k}: expected {} entries, got {}",
                        v + 1,
                        row.len()
                    )));
                }
                if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} row {k}: negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} row {k}: sums to {sum}, not 1"
                    )));
                }
                if row[0] < eos_floor - ROW_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} row {k}: EOS probability {} below floor {eos_floor}",
                        row[0]
                    )));
                }
            }
        }
        Ok(OracleSpec {
            vocab,
            num_classes,
            eos_floor,
            max_len,
            transitions,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn eos_floor(&self) -> f64 {
        self.eos_floor
    }

    pub fn class_of(&self, x: &Sequence) -> usize {
        context_class(x, self.num_classes)
    }

    /// Raw transition row for (class, prev2, prev1); `None` for reserved prevs
    /// other than BOS. Layout: index 0 = EOS, 1 + i = i-th real token.
    pub fn row(&self, class: usize, prev2: TokenId, prev1: TokenId) -> Option<&[f64]> {
        let k = self.key(prev2, prev1)?;
        Some(&self.transitions[class][k])
    }

    fn enc(&self, t: TokenId) -> Option<usize> {
        if t == BOS {
            Some(0)
        } else if (t as usize) >= RESERVED && (t as usize) < self.vocab.size() {
            Some(t as usize - RESERVED + 1)
        } else {
            None
        }
    }

    fn key(&self, prev2: TokenId, prev1: TokenId) -> Option<usize> {
        let base = self.vocab.num_tokens() + 1;
        Some(self.enc(prev2)? * base + self.enc(prev1)?)
    }

    fn prefix_key(&self, prefix: &[TokenId]) -> Result<usize> {
        let n = prefix.len();
        let prev1 = if n >= 1 { prefix[n - 1] } else { BOS };
        let prev2 = if n >= 2 { prefix[n - 2] } else { BOS };
        self.key(prev2, prev1)
            .ok_or_else(|| Error::InvalidArgument("reserved id inside a prefix".into()))
    }

    /// Next-token distribution over the full vocabulary (PAD/BOS get zero).
    /// One step before the length cap the distribution is a point mass on
    /// `EOS`; before that it is the table row for the class and last two
    /// tokens.
    pub fn conditional(&self, x: &Sequence, prefix: &[TokenId]) -> Result<Vec<f64>> {
        if prefix.contains(&EOS) {
            return Err(Error::InvalidArgument("EOS inside a prefix".into()));
        }
        if prefix.len() + 1 > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "prefix of {} tokens leaves no room under max_len {}",
                prefix.len(),
                self.max_len
            )));
        }
        let mut out = vec![0.0; self.vocab.size()];
        if prefix.len() + 1 == self.max_len {
            out[EOS as usize] = 1.0;
            return Ok(out);
        }
        let class = self.class_of(x);
        let row = &self.transitions[class][self.prefix_key(prefix)?];
        out[EOS as usize] = row[0];
        for (i, &p) in row[1..].iter().enumerate() {
            out[RESERVED + i] = p;
        }
        Ok(out)
    }

    /// Log-probability of the complete sequence `y` given `x`, under the
    /// capped process. `-inf` for zero-probability transitions and for
    /// sequences longer than the cap. Summed over all complete sequences up to
    /// `max_len`, the exponentials total exactly one.
    pub fn logprob(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        if !y.is_complete() {
            return Err(Error::InvalidArgument(
                "oracle logprob needs a complete sequence".into(),
            ));
        }
        if y.len() > self.max_len {
            return Ok(f64::NEG_INFINITY);
        }
        let class = self.class_of(x);
        let mut total = 0.0;
        for (t, &tok) in y.ids().iter().enumerate() {
            if t + 1 == self.max_len {
                // Forced EOS costs nothing; tok is EOS because y is complete.
                continue;
            }
            let row = &self.transitions[class][self.prefix_key(&y.ids()[..t])?];
            let p = if tok == EOS {
                row[0]
            } else {
                row[1 + tok as usize - RESERVED]
            };
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += p.ln();
        }
        Ok(total)
    }

    /// Log-probability under the stationary tables with the length cap
    /// ignored. Used to grade generations that may run past the cap (e.g.
    /// decoded with a larger budget); for sequences that end before the cap it
    /// equals `logprob`.
    pub fn logprob_uncapped(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        if !y.is_complete() {
            return Err(Error::InvalidArgument(
                "oracle logprob needs a complete sequence".into(),
            ));
        }
        let class = self.class_of(x);
        let mut total = 0.0;
        for (t, &tok) in y.ids().iter().enumerate() {
            let row = &self.transitions[class][self.prefix_key(&y.ids()[..t])?];
            let p = if tok == EOS {
                row[0]
            } else {
                row[1 + tok as usize - RESERVED]
            };
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += p.ln();
        }
        Ok(total)
    }

    /// Samples one complete sequence for `x`.
    pub fn sample(&self, x: &Sequence, rng: &mut impl Rng) -> Result<Sequence> {
        let mut ids: Vec<TokenId> = Vec::new();
        loop {
            let cond = self.conditional(x, &ids)?;
            let tok = sample_index(&cond, rng) as TokenId;
            ids.push(tok);
            if tok == EOS {
                return Ok(Sequence::from_raw(ids));
            }
        }
    }

    /// Exact sequence entropy (nats) and expected length (tokens including
    /// `EOS`) of the capped process given `x`, by dynamic programming over
    /// (prev2, prev1) states. The forced-EOS step contributes zero entropy.
    pub fn sequence_stats(&self, x: &Sequence) -> SequenceStats {
        let class = self.class_of(x);
        let base = self.vocab.num_tokens() + 1;
        let mut mass = vec![0.0_f64; base * base];
        mass[0] = 1.0; // (BOS, BOS)
        let mut entropy = 0.0;
        let mut expected_len = 0.0;
        for t in 0..self.max_len {
            let alive: f64 = mass.iter().sum();
            if alive <= 0.0 {
                break;
            }
            expected_len += alive;
            if t + 1 == self.max_len {
                break; // forced EOS: zero entropy, everything terminates
            }
            let mut next = vec![0.0_f64; base * base];
            for (key, &q) in mass.iter().enumerate() {
                if q <= 0.0 {
                    continue;
                }
                let row = &self.transitions[class][key];
                for &p in row.iter() {
                    if p > 0.0 {
                        entropy -= q * p * p.ln();
                    }
                }
                let prev1 = key % base;
                for (i, &p) in row[1..].iter().enumerate() {
                    if p > 0.0 {
                        next[prev1 * base + (i + 1)] += q * p;
                    }
                }
            }
            mass = next;
        }
        SequenceStats {
            entropy,
            expected_len,
        }
    }

    /// Pooled per-token entropy rate over a context set: mean sequence entropy
    /// divided by mean length. Matches the large-sample limit of per-token NLL
    /// of oracle samples scored by the oracle itself.
    pub fn entropy_rate(&self, contexts: &[Sequence]) -> f64 {
        let mut h = 0.0;
        let mut l = 0.0;
        for x in contexts {
            let s = self.sequence_stats(x);
            h += s.entropy;
            l += s.expected_len;
        }
        h / l
    }

    /// An order-2 tabular policy whose conditionals equal this table's rows
    /// (log-probabilities as logits; a zero probability becomes `-inf`). The
    /// result realizes the data process exactly, up to rounding in
    /// `exp(ln p)`, which makes it the reference point for identity tests and
    /// for the best achievable held-out NLL.
    pub fn to_policy(&self) -> TabularPolicy {
        let mut policy =
            TabularPolicy::new(2, self.num_classes, self.vocab.size()).expect("valid dims");
        let base = self.vocab.num_tokens() + 1;
        let vs = self.vocab.size();
        let params = policy.params_mut();
        for (c, table) in self.transitions.iter().enumerate() {
            for (key, row) in table.iter().enumerate() {
                let at = (c * base * base + key) * vs;
                params[at + EOS as usize] = row[0].ln();
                for (i, &p) in row[1..].iter().enumerate() {
                    params[at + RESERVED + i] = p.ln();
                }
            }
        }
        policy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceStats {
    pub entropy: f64,
    pub expected_len: f64,
}

/// Generator knobs for random task instances. Every knob has a default, so
/// a config file may name only the ones it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleGenConfig {
    /// Number of real tokens.
    pub vocab_size: usize,
    pub num_classes: usize,
    /// Lower bound on EOS probability in every row.
    pub eos_floor: f64,
    /// Maximum total sequence length including EOS.
    pub max_len: usize,
    /// Dirichlet-style concentration for token shares; smaller is peakier.
    pub alpha: f64,
    /// Fraction of rows that are terminal-leaning (EOS gets a large share).
    pub end_state_frac: f64,
    /// Seed for the table draw; fixes the task identity.
    pub seed: u64,
}

impl Default for OracleGenConfig {
    fn default() -> Self {
        OracleGenConfig {
            vocab_size: 20,
            num_classes: 8,
            eos_floor: 0.05,
            max_len: 40,
            alpha: 0.25,
            end_state_frac: 0.3,
            seed: 7,
        }
    }
}

/// Samples a random task: peaked token rows (Gamma-normalized with a small
/// uniform mix so every entry stays positive) and a split between ordinary
/// rows and terminal-leaning rows so that modal paths reach EOS. Rows keyed by
/// an unreachable history (nothing precedes BOS) are generated all the same;
/// they are never consulted.
pub fn generate_oracle(cfg: &OracleGenConfig) -> Result<OracleSpec> {
    if cfg.vocab_size == 0 {
        return Err(Error::InvalidArgument("vocab_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.eos_floor) || cfg.eos_floor > 0.5 {
        return Err(Error::InvalidArgument(
            "eos_floor must be in [0, 0.5] for generated tasks".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.end_state_frac) {
        return Err(Error::InvalidArgument(
            "end_state_frac must be in [0, 1]".into(),
        ));
    }
    if cfg.alpha <= 0.0 {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let vocab = Vocab::synthetic(cfg.vocab_size)?;
    let v = cfg.vocab_size;
    let keys = (v + 1) * (v + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = Gamma::new(cfg.alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("bad concentration: {e}")))?;
    let mut transitions = Vec::with_capacity(cfg.num_classes);
    for _class in 0..cfg.num_classes {
        let mut table = Vec::with_capacity(keys);
        for key in 0..keys {
            let first_step = key == 0; // (BOS, BOS): never terminal-leaning
            let terminal = !first_step && rng.gen::<f64>() < cfg.end_state_frac;
            let eos = if terminal {
                rng.gen_range(0.5..0.9)
            } else {
                rng.gen_range(cfg.eos_floor + 0.01..cfg.eos_floor + 0.08)
            };
            let mut shares: Vec<f64> = (0..v).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = shares.iter().sum();
            if total <= 0.0 {
                shares = vec![1.0; v];
            }
            let norm: f64 = shares.iter().sum();
            let mut row = Vec::with_capacity(v + 1);
            row.push(eos);
            for s in &shares {
                // 2% uniform mix keeps every token reachable (finite NLL).
                row.push((1.0 - eos) * (0.98 * s / norm + 0.02 / v as f64));
            }
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            table.push(row);
        }
        transitions.push(table);
    }
    OracleSpec::new(
        vocab,
        cfg.num_classes,
        cfg.eos_floor,
        cfg.max_len,
        transitions,
    )
}

/// Uniform random contexts of `ctx_len` real tokens.
pub fn sample_contexts(vocab: &Vocab, n: usize, ctx_len: usize, seed: u64) -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = RESERVED as TokenId;
    let last = vocab.size() as TokenId;
    (0..n)
        .map(|_| Sequence::from_raw((0..ctx_len).map(|_| rng.gen_range(first..last)).collect()))
        .collect()
}

/// Samples `n_per_context` targets for every context, in context order.
/// Deterministic given the seed.
pub fn sample_oracle_dataset(
    spec: &OracleSpec,
    contexts: &[Sequence],
    n_per_context: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(contexts.len() * n_per_context);
    for x in contexts {
        for _ in 0..n_per_context {
            let y = spec.sample(x, &mut rng)?;
            examples.push(Example::new(x.clone(), y)?);
        }
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "no contexts given to sample from".into(),
        ));
    }
    Ok(Dataset {
        examples,
        vocab: spec.vocab().clone(),
        split: Split::Train,
    })
}

pub fn write_oracle(spec: &OracleSpec, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string(spec).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_oracle(path: &std::path::Path) -> Result<OracleSpec> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: OracleSpec = serde_json::from_str(&raw).map_err(|e| Error::json(path, e))?;
    // Revalidate: the file may have been edited by hand.
    OracleSpec::new(
        spec.vocab.clone(),
        spec.num_classes,
        spec.eos_floor,
        spec.max_len,
        spec.transitions.clone(),
    )
}

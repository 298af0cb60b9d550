//! Learning autoregressive sequence generators from demonstrations, with the
//! data distribution known exactly.
//!
//! The library trains small conditional generators (tabular m-gram and Elman
//! recurrent policies, hand-written gradients, no ML runtime) on data sampled
//! from a context-conditioned order-2 Markov chain whose transition tables are
//! explicit. Because the true distribution is available in closed form, every
//! estimator here can be checked against enumeration or analytic values.
//!
//! Learners:
//! - maximum likelihood (`training::train_mle`),
//! - off-policy policy gradient from demonstrations with snapshot importance
//!   weights and demonstration-derived rewards (`training::train_gold`),
//! - on-policy policy gradient with a sequence-metric reward, interleaved
//!   with likelihood updates (`training::train_pg`).
//!
//! `decoding` covers greedy, beam, and top-k decoding; `evaluation` covers
//! held-out NLL, BLEU/ROUGE, oracle-scored generation quality, decoding
//! sensitivity, exposure curves, and diversity statistics. The `config` and
//! `runner` modules wire everything into the `gold` binary with reproducible,
//! manifest-stamped run directories.

pub mod config;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod runner;
pub mod stats;
pub mod training;

pub use error::{Error, Result};

//! Metrics and analyses comparing trained policies with the data process:
//! held-out NLL, overlap metrics, process-scored sample quality, decoding
//! sensitivity, degradation curves, and diversity.

pub mod bleu;
pub mod curves;
pub mod diversity;
pub mod nll;
pub mod quality;
pub mod rouge;
pub mod sensitivity;

pub use bleu::{corpus_bleu, sentence_bleu};
pub use curves::{exposure_curves, ExposureCurves, LengthBucket, PrefixPoint};
pub use diversity::{diversity_stats, DiversityStats};
pub use nll::{heldout_nll, nll_histogram, NllHistogram, NllSummary, TokenLossRecord};
pub use quality::{perceptual_quality, QualityEstimate, QualityMode};
pub use rouge::{rouge_scores, RougeScores};
pub use sensitivity::{
    decoding_sensitivity, default_sweep, strip_eos, SensitivityRow, SensitivityTable, BLEU_ORDER,
};

//! Training histories: periodic dev-set evaluations plus the selected
//! checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;

/// One periodic dev-set evaluation. Learner-specific diagnostics stay
/// `None` where they do not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Optimizer updates completed when the evaluation ran.
    pub step: usize,
    pub dev_nll: f64,
    pub dev_ppl: f64,
    /// Greedy corpus BLEU-4 on the dev set, for learners selected by it.
    pub dev_bleu: Option<f64>,
    /// Mean per-action importance weight over the last batch.
    pub mean_weight: Option<f64>,
    /// Mean return (or on-policy reward) over the last batch.
    pub mean_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub learner: String,
    /// Updates actually performed.
    pub steps: usize,
    pub points: Vec<EvalPoint>,
    /// Step whose evaluation selected the returned checkpoint.
    pub best_step: usize,
    /// Value of the selection metric at `best_step` (dev NLL for
    /// likelihood training, dev BLEU otherwise).
    pub best_metric: f64,
    /// Not serialized: wall time is never part of a deterministic report.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn new(learner: &str) -> Self {
        TrainReport {
            learner: learner.to_string(),
            steps: 0,
            points: Vec::new(),
            best_step: 0,
            best_metric: f64::NAN,
            wall_clock_secs: 0.0,
        }
    }

    /// Appends an evaluation; steps must arrive in increasing order.
    pub fn push(&mut self, point: EvalPoint) {
        if let Some(last) = self.points.last() {
            assert!(
                point.step > last.step,
                "evaluation steps must increase: {} after {}",
                point.step,
                last.step
            );
        }
        self.points.push(point);
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// History as CSV, one row per evaluation, empty cells for `None`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,dev_nll,dev_ppl,dev_bleu,mean_weight,mean_return\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.step,
                p.dev_nll,
                p.dev_ppl,
                cell(p.dev_bleu),
                cell(p.mean_weight),
                cell(p.mean_return),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A finished training run: the selected checkpoint and its history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub report: TrainReport,
}

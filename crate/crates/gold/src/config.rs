//! Experiment configuration: a single JSON document naming the task, the
//! model, the learner pipeline, the decode sweep, evaluation selections,
//! seeds, and the output root.
//!
//! Parsing is strict — unknown keys are rejected by name — and every knob a
//! block omits is filled with its documented default, so a minimal config is a
//! complete experiment description. Learner pipelines that fine-tune a
//! likelihood-trained model (all of them except plain `mle`) run the `mle`
//! stage first inside the same invocation; its block is optional and defaults
//! apply when absent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::DecodeMethod;
use crate::error::{Error, Result};
use crate::evaluation::{default_sweep, QualityMode};
use crate::oracle::{generate_oracle, read_oracle, OracleGenConfig, OracleSpec};
use crate::policy::{OptAlgo, OptimizerConfig, Policy, RnnPolicy, TabularPolicy};
use crate::reward::{RewardKind, RewardSpec};
use crate::stats::derive_seed;
use crate::training::{GoldConfig, MleConfig, PgConfig};

/// Learner pipelines selectable by name. The three `gold-*` variants differ
/// only in the reward shape fed to the off-policy trainer; `pg` fine-tunes a
/// likelihood model with on-policy steps; `gold+pg` chains score-reward
/// off-policy training and then on-policy fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerName {
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "gold-delta")]
    GoldDelta,
    #[serde(rename = "gold-p")]
    GoldP,
    #[serde(rename = "gold-s")]
    GoldS,
    #[serde(rename = "pg")]
    Pg,
    #[serde(rename = "gold+pg")]
    GoldPg,
}

/// One step of a learner pipeline, labeled with the checkpoint/report stem
/// its artifacts are written under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Mle,
    Gold(RewardKind),
    Pg,
}

impl LearnerName {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerName::Mle => "mle",
            LearnerName::GoldDelta => "gold-delta",
            LearnerName::GoldP => "gold-p",
            LearnerName::GoldS => "gold-s",
            LearnerName::Pg => "pg",
            LearnerName::GoldPg => "gold+pg",
        }
    }

    /// Pipeline stages in execution order, paired with artifact stems. The
    /// final stem always equals `as_str()`, so downstream commands can load
    /// `<learner>.json` without knowing the pipeline shape.
    pub fn stages(self) -> Vec<(Stage, &'static str)> {
        match self {
            LearnerName::Mle => vec![(Stage::Mle, "mle")],
            LearnerName::GoldDelta => {
                vec![
                    (Stage::Mle, "mle"),
                    (Stage::Gold(RewardKind::Delta), "gold-delta"),
                ]
            }
            LearnerName::GoldP => {
                vec![
                    (Stage::Mle, "mle"),
                    (Stage::Gold(RewardKind::Prob), "gold-p"),
                ]
            }
            LearnerName::GoldS => {
                vec![
                    (Stage::Mle, "mle"),
                    (Stage::Gold(RewardKind::LogProb), "gold-s"),
                ]
            }
            LearnerName::Pg => vec![(Stage::Mle, "mle"), (Stage::Pg, "pg")],
            LearnerName::GoldPg => vec![
                (Stage::Mle, "mle"),
                (Stage::Gold(RewardKind::LogProb), "gold-s"),
                (Stage::Pg, "gold+pg"),
            ],
        }
    }
}

/// Where the generating distribution comes from: drawn from generator knobs,
/// or read back from a previously written table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleSource {
    Generate(OracleGenConfig),
    Path(PathBuf),
}

/// Dataset shape. Context sets and target draws are seeded per run seed, so
/// every seed sees its own sample of the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub train_contexts: usize,
    pub train_per_context: usize,
    pub dev_contexts: usize,
    pub dev_per_context: usize,
    pub context_len: usize,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock {
            train_contexts: 50,
            train_per_context: 200,
            dev_contexts: 20,
            dev_per_context: 20,
            context_len: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Tabular,
    Rnn,
}

/// Model shape. `order`, `embed_dim`, `hidden_dim`, and `init_seed` each
/// apply to one family and are ignored by the other; `num_classes` defaults
/// to the task's own class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub family: ModelFamily,
    /// History window of the tabular family.
    pub order: usize,
    pub num_classes: Option<usize>,
    /// Recurrent family only.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            family: ModelFamily::Tabular,
            order: 1,
            num_classes: None,
            embed_dim: 8,
            hidden_dim: 16,
            init_seed: 0,
        }
    }
}

/// Likelihood-training stage. `lr: null` picks the family default
/// (1e-2 tabular, 3e-3 recurrent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleBlock {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub algo: OptAlgo,
    pub eval_every: usize,
}

impl Default for MleBlock {
    fn default() -> Self {
        MleBlock {
            steps: 2000,
            batch_size: 32,
            lr: None,
            algo: OptAlgo::Adam,
            eval_every: 200,
        }
    }
}

/// Off-policy stage. Reward-shape knobs left as `null` take the defaults of
/// the reward kind the learner name picks; `weight_floor` and `sync_every`
/// default to 0.1 and 1500.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoldBlock {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub algo: OptAlgo,
    pub eval_every: usize,
    pub weight_floor: f64,
    pub sync_every: usize,
    /// Generation budget for dev decoding; defaults to the task cap.
    pub dev_max_len: Option<usize>,
    pub clamp: Option<f64>,
    pub baseline: Option<f64>,
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
}

impl Default for GoldBlock {
    fn default() -> Self {
        GoldBlock {
            steps: 2000,
            batch_size: 32,
            lr: None,
            algo: OptAlgo::Adam,
            eval_every: 200,
            weight_floor: 0.1,
            sync_every: 1500,
            dev_max_len: None,
            clamp: None,
            baseline: None,
            gamma: None,
            horizon: None,
        }
    }
}

/// On-policy fine-tuning stage (interleaved likelihood and policy-gradient
/// updates inside the trainer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgBlock {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub algo: OptAlgo,
    pub eval_every: usize,
    pub baseline: f64,
    pub bleu_order: usize,
    /// Rollout budget; defaults to the task cap.
    pub max_len: Option<usize>,
}

impl Default for PgBlock {
    fn default() -> Self {
        PgBlock {
            steps: 1000,
            batch_size: 32,
            lr: None,
            algo: OptAlgo::Adam,
            eval_every: 200,
            baseline: 0.05,
            bleu_order: 4,
            max_len: None,
        }
    }
}

/// Evaluation selections shared by `evaluate` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    /// Token-loss histogram bin width in nats.
    pub bin_width: f64,
    pub quality: QualityMode,
    /// Stochastic generations per context for the length/quality curves.
    pub exposure_samples: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            bin_width: 0.05,
            quality: QualityMode::MonteCarlo { samples: 64 },
            exposure_samples: 8,
        }
    }
}

fn default_decode_sweep() -> Vec<DecodeMethod> {
    default_sweep()
}

/// Root experiment description. `oracle`, `learner`, `seeds`, and `out_dir`
/// are mandatory; the learner's own block must be present (possibly empty);
/// everything else defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub oracle: OracleSource,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default)]
    pub model: ModelBlock,
    pub learner: LearnerName,
    #[serde(default)]
    pub mle: Option<MleBlock>,
    #[serde(default)]
    pub gold: Option<GoldBlock>,
    #[serde(default)]
    pub pg: Option<PgBlock>,
    #[serde(default = "default_decode_sweep")]
    pub decode: Vec<DecodeMethod>,
    #[serde(default)]
    pub eval: EvalBlock,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

/// Reads and strictly validates a config file. Relative `oracle.path`
/// references are resolved against the config file's directory and must
/// exist. `out_dir` is kept as written.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let OracleSource::Path(ref mut p) = cfg.oracle {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
        if !p.exists() {
            return Err(Error::MissingPrereq(p.clone()));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must name at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match self.learner {
            LearnerName::Mle if self.mle.is_none() => {
                return Err(Error::Config(
                    "learner \"mle\" requires an \"mle\" block".into(),
                ));
            }
            LearnerName::GoldDelta | LearnerName::GoldP | LearnerName::GoldS
                if self.gold.is_none() =>
            {
                return Err(Error::Config(format!(
                    "learner \"{}\" requires a \"gold\" block",
                    self.learner.as_str()
                )));
            }
            LearnerName::Pg if self.pg.is_none() => {
                return Err(Error::Config(
                    "learner \"pg\" requires a \"pg\" block".into(),
                ));
            }
            LearnerName::GoldPg if self.gold.is_none() || self.pg.is_none() => {
                return Err(Error::Config(
                    "learner \"gold+pg\" requires both \"gold\" and \"pg\" blocks".into(),
                ));
            }
            _ => {}
        }
        if self.data.train_contexts == 0
            || self.data.train_per_context == 0
            || self.data.dev_contexts == 0
            || self.data.dev_per_context == 0
        {
            return Err(Error::Config("data counts must be positive".into()));
        }
        if self.data.context_len == 0 {
            return Err(Error::Config("context_len must be at least 1".into()));
        }
        if self.model.order == 0 {
            return Err(Error::Config("model order must be at least 1".into()));
        }
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.model.num_classes == Some(0) {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.decode.is_empty() {
            return Err(Error::Config(
                "decode sweep must name at least one method".into(),
            ));
        }
        let mut labels: Vec<String> = self.decode.iter().map(|m| m.label()).collect();
        for m in &self.decode {
            m.validate()?;
        }
        labels.sort();
        labels.dedup();
        if labels.len() != self.decode.len() {
            return Err(Error::Config("decode sweep repeats a method".into()));
        }
        if !(self.eval.bin_width > 0.0 && self.eval.bin_width.is_finite()) {
            return Err(Error::Config(format!(
                "bin_width must be positive and finite, got {}",
                self.eval.bin_width
            )));
        }
        if let QualityMode::MonteCarlo { samples } = self.eval.quality {
            if samples == 0 {
                return Err(Error::Config("quality samples must be positive".into()));
            }
        }
        if self.eval.exposure_samples == 0 {
            return Err(Error::Config("exposure_samples must be positive".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        self.stage_configs_check()?;
        Ok(())
    }

    /// Resolves every stage config once with a throwaway seed so bad numbers
    /// fail at parse time, not mid-run.
    fn stage_configs_check(&self) -> Result<()> {
        for (stage, _) in self.learner.stages() {
            match stage {
                Stage::Mle => self.mle_config(ModelFamily::Tabular, 0).validate()?,
                Stage::Gold(kind) => self
                    .gold_config(kind, ModelFamily::Tabular, 1, 0)
                    .validate()?,
                Stage::Pg => self.pg_config(ModelFamily::Tabular, 1, 0).validate()?,
            }
        }
        Ok(())
    }

    /// Loads or draws the generating distribution.
    pub fn load_oracle(&self) -> Result<OracleSpec> {
        match &self.oracle {
            OracleSource::Generate(g) => generate_oracle(g),
            OracleSource::Path(p) => read_oracle(p),
        }
    }

    /// Fresh, untrained policy of the configured shape over the task's
    /// vocabulary.
    pub fn build_init_policy(&self, oracle: &OracleSpec) -> Result<Policy> {
        let classes = self
            .model
            .num_classes
            .unwrap_or_else(|| oracle.num_classes());
        let vocab_size = oracle.vocab().size();
        match self.model.family {
            ModelFamily::Tabular => Ok(Policy::Tabular(TabularPolicy::new(
                self.model.order,
                classes,
                vocab_size,
            )?)),
            ModelFamily::Rnn => Ok(Policy::Rnn(RnnPolicy::new(
                classes,
                vocab_size,
                self.model.embed_dim,
                self.model.hidden_dim,
                self.model.init_seed,
            )?)),
        }
    }

    fn lr_for(&self, explicit: Option<f64>, family: ModelFamily) -> f64 {
        explicit.unwrap_or(match family {
            ModelFamily::Tabular => 1e-2,
            ModelFamily::Rnn => 3e-3,
        })
    }

    pub fn mle_config(&self, family: ModelFamily, seed: u64) -> MleConfig {
        let block = self.mle.clone().unwrap_or_default();
        MleConfig {
            steps: block.steps,
            batch_size: block.batch_size,
            optimizer: OptimizerConfig {
                algo: block.algo,
                lr: self.lr_for(block.lr, family),
            },
            eval_every: block.eval_every,
            seed: derive_seed(seed, &[10]),
        }
    }

    pub fn gold_config(
        &self,
        kind: RewardKind,
        family: ModelFamily,
        oracle_max_len: usize,
        seed: u64,
    ) -> GoldConfig {
        let block = self.gold.clone().unwrap_or_default();
        let mut reward = RewardSpec::defaults_for(kind);
        if let Some(c) = block.clamp {
            reward.clamp = c;
        }
        if let Some(b) = block.baseline {
            reward.baseline = b;
        }
        if let Some(g) = block.gamma {
            reward.gamma = g;
        }
        if let Some(h) = block.horizon {
            reward.horizon = h;
        }
        GoldConfig {
            steps: block.steps,
            batch_size: block.batch_size,
            optimizer: OptimizerConfig {
                algo: block.algo,
                lr: self.lr_for(block.lr, family),
            },
            eval_every: block.eval_every,
            reward,
            weight_floor: block.weight_floor,
            sync_every: block.sync_every,
            dev_max_len: block.dev_max_len.unwrap_or(oracle_max_len),
            seed: derive_seed(seed, &[11]),
        }
    }

    pub fn pg_config(&self, family: ModelFamily, oracle_max_len: usize, seed: u64) -> PgConfig {
        let block = self.pg.clone().unwrap_or_default();
        PgConfig {
            steps: block.steps,
            batch_size: block.batch_size,
            optimizer: OptimizerConfig {
                algo: block.algo,
                lr: self.lr_for(block.lr, family),
            },
            eval_every: block.eval_every,
            baseline: block.baseline,
            bleu_order: block.bleu_order,
            max_len: block.max_len.unwrap_or(oracle_max_len),
            seed: derive_seed(seed, &[12]),
        }
    }
}

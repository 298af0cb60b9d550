//! Run-directory orchestration behind the CLI subcommands.
//!
//! Every invocation works inside `<out_dir>/<run-id>/`, where the run id
//! hashes the configuration (output root blanked) and appends the seed list.
//! Identical configs therefore land in the same directory, which is how the
//! stages chain: `gen-data` fills `data/`, `train` fills `checkpoints/` plus
//! per-stage training reports, `decode` fills `gen/`, and `evaluate` and
//! `compare` fill `reports/`. Every artifact is a pure function of the
//! config, so re-running a stage rewrites identical bytes; wall-clock
//! timings go to `timing.json`, the one file the manifest does not hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LearnerName, Stage};
use crate::corpus::{read_dataset, write_dataset, Example, Sequence, Split, TokenId};
use crate::decoding::DecodeMethod;
use crate::error::{Error, Result};
use crate::evaluation::{
    decoding_sensitivity, diversity_stats, exposure_curves, heldout_nll, nll_histogram,
    perceptual_quality, rouge_scores, strip_eos, DiversityStats, ExposureCurves, NllHistogram,
    NllSummary, QualityEstimate, RougeScores, SensitivityTable,
};
use crate::oracle::{read_oracle, sample_contexts, sample_oracle_dataset, OracleSpec};
use crate::policy::Policy;
use crate::stats::derive_seed;
use crate::training::{train_gold, train_mle, train_pg, TrainOutcome};

// Seed salts, one namespace per consumer so no two stages share a stream.
const SALT_TRAIN_CONTEXTS: u64 = 1;
const SALT_DEV_CONTEXTS: u64 = 2;
const SALT_TRAIN_DRAW: u64 = 3;
const SALT_DEV_DRAW: u64 = 4;
const SALT_DECODE: u64 = 20;
const SALT_SENSITIVITY: u64 = 30;
const SALT_QUALITY: u64 = 31;
const SALT_CURVES: u64 = 32;
const SALT_DIVERSITY: u64 = 33;

/// Short config digest plus the seed list, e.g. `3fa4b21c-s1-2-3`. The
/// output root is blanked before hashing so moving a run directory does not
/// change its identity.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let mut blanked = cfg.clone();
    blanked.out_dir = PathBuf::new();
    let canon = serde_json::to_string(&blanked).expect("config serializes");
    let digest = Sha256::digest(canon.as_bytes());
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    format!("{}-s{}", hex::encode(&digest[..4]), seeds.join("-"))
}

/// All file locations inside one run directory.
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        RunPaths {
            root: cfg.out_dir.join(run_id(cfg)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }

    pub fn oracle(&self) -> PathBuf {
        self.root.join("data").join("oracle.json")
    }

    pub fn dataset(&self, seed: u64, split: Split) -> PathBuf {
        self.root
            .join("data")
            .join(format!("s{seed}"))
            .join(format!("{}.jsonl", split.as_str()))
    }

    pub fn checkpoint(&self, seed: u64, stem: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("s{seed}"))
            .join(format!("{stem}.json"))
    }

    pub fn train_report(&self, seed: u64, stem: &str) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("s{seed}"))
            .join(format!("train-{stem}.json"))
    }

    pub fn eval_report(&self, seed: u64, learner: &str) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("s{seed}"))
            .join(format!("eval-{learner}.json"))
    }

    pub fn generations(&self, seed: u64, learner: &str, method_label: &str) -> PathBuf {
        self.root
            .join("gen")
            .join(format!("s{seed}"))
            .join(format!("{learner}-{method_label}.jsonl"))
    }

    pub fn compare_report(&self) -> PathBuf {
        self.root.join("reports").join("compare.json")
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Stage next to the target and rename, so a failure mid-write never
    // leaves a truncated artifact behind.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

/// Missing-prerequisite check that names the path it wanted.
fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPrereq(path))
    }
}

/// Config echo plus a digest of every artifact in the run directory
/// (`timing.json` excepted). Re-running any stage must reproduce these
/// hashes bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub artifacts: BTreeMap<String, String>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walk stays under root")
            .to_string_lossy()
            .into_owned();
        if rel == "manifest.json" || rel == "timing.json" {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.insert(rel, hex::encode(Sha256::digest(&bytes)));
    }
    Ok(())
}

fn update_manifest(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<()> {
    let mut artifacts = BTreeMap::new();
    collect_files(paths.root(), paths.root(), &mut artifacts)?;
    let manifest = Manifest {
        run_id: run_id(cfg),
        seeds: cfg.seeds.clone(),
        config: cfg.clone(),
        artifacts,
    };
    write_json(&paths.manifest(), &manifest)
}

fn record_timing(paths: &RunPaths, stage: &str, secs: f64) -> Result<()> {
    let path = paths.timing();
    let mut map: BTreeMap<String, f64> = if path.exists() {
        read_json(&path)?
    } else {
        BTreeMap::new()
    };
    map.insert(stage.to_string(), secs);
    write_json(&path, &map)
}

/// Contexts in first-appearance order; dataset examples arrive grouped by
/// context, so consecutive dedup recovers the context set.
pub(crate) fn unique_contexts(examples: &[Example]) -> Vec<Sequence> {
    let mut out: Vec<Sequence> = Vec::new();
    for e in examples {
        if out.last() != Some(&e.x) {
            out.push(e.x.clone());
        }
    }
    out
}

/// Full-vocabulary top-k, i.e. ancestral sampling from the policy.
fn sampling_method(policy: &Policy) -> DecodeMethod {
    DecodeMethod::TopK {
        k: policy.vocab_size(),
        temperature: 1.0,
    }
}

fn load_datasets(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    oracle: &OracleSpec,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let train = read_dataset(
        &require(paths.dataset(seed, Split::Train))?,
        oracle.vocab(),
        Split::Train,
    )?;
    let dev = read_dataset(
        &require(paths.dataset(seed, Split::Dev))?,
        oracle.vocab(),
        Split::Dev,
    )?;
    let _ = cfg;
    Ok((train.examples, dev.examples))
}

fn load_oracle_artifact(paths: &RunPaths) -> Result<OracleSpec> {
    read_oracle(&require(paths.oracle())?)
}

/// Writes the task tables and per-seed train/dev splits.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let paths = RunPaths::new(cfg);
    let oracle = cfg.load_oracle()?;
    let text = serde_json::to_string_pretty(&oracle).map_err(|e| Error::json(paths.oracle(), e))?;
    write_bytes(&paths.oracle(), text.as_bytes())?;
    for &seed in &cfg.seeds {
        let train_ctx = sample_contexts(
            oracle.vocab(),
            cfg.data.train_contexts,
            cfg.data.context_len,
            derive_seed(seed, &[SALT_TRAIN_CONTEXTS]),
        );
        let dev_ctx = sample_contexts(
            oracle.vocab(),
            cfg.data.dev_contexts,
            cfg.data.context_len,
            derive_seed(seed, &[SALT_DEV_CONTEXTS]),
        );
        let train = sample_oracle_dataset(
            &oracle,
            &train_ctx,
            cfg.data.train_per_context,
            derive_seed(seed, &[SALT_TRAIN_DRAW]),
        )?;
        let dev = sample_oracle_dataset(
            &oracle,
            &dev_ctx,
            cfg.data.dev_per_context,
            derive_seed(seed, &[SALT_DEV_DRAW]),
        )?
        .relabel(Split::Dev);
        let train_path = paths.dataset(seed, Split::Train);
        if let Some(dir) = train_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_dataset(&train, &train_path)?;
        write_dataset(&dev, &paths.dataset(seed, Split::Dev))?;
    }
    update_manifest(&paths, cfg)?;
    record_timing(&paths, "gen-data", started.elapsed().as_secs_f64())
}

fn run_stage(
    cfg: &ExperimentConfig,
    oracle: &OracleSpec,
    train: &[Example],
    dev: &[Example],
    seed: u64,
    stage: Stage,
    input: &Policy,
) -> Result<TrainOutcome> {
    let family = cfg.model.family;
    match stage {
        Stage::Mle => train_mle(input, train, dev, &cfg.mle_config(family, seed)),
        Stage::Gold(kind) => train_gold(
            input,
            train,
            dev,
            &cfg.gold_config(kind, family, oracle.max_len(), seed),
        ),
        Stage::Pg => train_pg(
            input,
            train,
            dev,
            &cfg.pg_config(family, oracle.max_len(), seed),
        ),
    }
}

/// Runs every stage the given learners need, sharing stems: all pipelines
/// reuse the same likelihood pretrain, and `gold+pg` picks up the `gold-s`
/// stage when both are requested. Returns the trained policy per stem.
fn train_stages(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    oracle: &OracleSpec,
    train: &[Example],
    dev: &[Example],
    seed: u64,
    learners: &[LearnerName],
) -> Result<BTreeMap<&'static str, Policy>> {
    let mut trained: BTreeMap<&'static str, Policy> = BTreeMap::new();
    for learner in learners {
        let mut prev: Option<&'static str> = None;
        for (stage, stem) in learner.stages() {
            if !trained.contains_key(stem) {
                let input = match prev {
                    None => cfg.build_init_policy(oracle)?,
                    Some(p) => trained[p].clone(),
                };
                let outcome = run_stage(cfg, oracle, train, dev, seed, stage, &input)?;
                let ckpt = paths.checkpoint(seed, stem);
                if let Some(dir) = ckpt.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                outcome.policy.save(&ckpt)?;
                write_json(&paths.train_report(seed, stem), &outcome.report)?;
                trained.insert(stem, outcome.policy);
            }
            prev = Some(stem);
        }
    }
    Ok(trained)
}

/// Trains the configured learner pipeline for every seed.
pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let paths = RunPaths::new(cfg);
    let oracle = load_oracle_artifact(&paths)?;
    for &seed in &cfg.seeds {
        let (train_ex, dev_ex) = load_datasets(cfg, &paths, &oracle, seed)?;
        train_stages(
            cfg,
            &paths,
            &oracle,
            &train_ex,
            &dev_ex,
            seed,
            &[cfg.learner],
        )?;
    }
    update_manifest(&paths, cfg)?;
    record_timing(&paths, "train", started.elapsed().as_secs_f64())
}

#[derive(Serialize)]
struct GenLine<'a> {
    x: &'a [TokenId],
    y_hat: &'a [TokenId],
    method: &'a str,
    seed: u64,
    logprob: f64,
}

/// One generation per dev example per sweep method, written as JSONL.
fn decode_learner(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    oracle: &OracleSpec,
    dev: &[Example],
    policy: &Policy,
    learner: &str,
    seed: u64,
) -> Result<()> {
    for (m_idx, method) in cfg.decode.iter().enumerate() {
        let label = method.label();
        let mut lines = String::new();
        for (i, ex) in dev.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[SALT_DECODE, m_idx as u64, i as u64],
            ));
            let y = crate::decoding::decode(policy, &ex.x, method, oracle.max_len(), &mut rng)?;
            let logprob = policy.sequence_logprob_capped(&ex.x, &y, oracle.max_len())?;
            let line = GenLine {
                x: ex.x.ids(),
                y_hat: y.ids(),
                method: &label,
                seed,
                logprob,
            };
            lines.push_str(&serde_json::to_string(&line).expect("line serializes"));
            lines.push('\n');
        }
        write_bytes(&paths.generations(seed, learner, &label), lines.as_bytes())?;
    }
    Ok(())
}

/// Decodes the configured learner's final checkpoint across the sweep.
pub fn decode(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let paths = RunPaths::new(cfg);
    let oracle = load_oracle_artifact(&paths)?;
    let learner = cfg.learner.as_str();
    for &seed in &cfg.seeds {
        let (_, dev_ex) = load_datasets(cfg, &paths, &oracle, seed)?;
        let policy = Policy::load(&require(paths.checkpoint(seed, learner))?)?;
        decode_learner(cfg, &paths, &oracle, &dev_ex, &policy, learner, seed)?;
    }
    update_manifest(&paths, cfg)?;
    record_timing(&paths, "decode", started.elapsed().as_secs_f64())
}

/// Everything `evaluate` measures for one trained model on one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub learner: String,
    pub seed: u64,
    pub nll: NllSummary,
    pub histogram: NllHistogram,
    pub sensitivity: SensitivityTable,
    pub quality: QualityEstimate,
    pub exposure: ExposureCurves,
    pub diversity: DiversityStats,
    /// Greedy decode scored against the reference, averaged over dev.
    pub rouge: RougeScores,
}

fn evaluate_learner(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    oracle: &OracleSpec,
    dev: &[Example],
    policy: &Policy,
    learner: &str,
    seed: u64,
) -> Result<EvalReport> {
    let (nll, tokens) = heldout_nll(policy, dev)?;
    let losses: Vec<f64> = tokens.iter().map(|t| t.nll).collect();
    let histogram = nll_histogram(&losses, cfg.eval.bin_width)?;
    let sensitivity = decoding_sensitivity(
        policy,
        dev,
        &cfg.decode,
        oracle.max_len(),
        derive_seed(seed, &[SALT_SENSITIVITY]),
    )?;
    let contexts = unique_contexts(dev);
    let quality = perceptual_quality(
        policy,
        oracle,
        &contexts,
        cfg.eval.quality,
        derive_seed(seed, &[SALT_QUALITY]),
    )?;
    let exposure = exposure_curves(
        policy,
        oracle,
        dev,
        &sampling_method(policy),
        cfg.eval.exposure_samples,
        derive_seed(seed, &[SALT_CURVES]),
    )?;

    let mut gens: Vec<Vec<TokenId>> = Vec::with_capacity(dev.len());
    let mut inputs: Vec<Vec<TokenId>> = Vec::with_capacity(dev.len());
    let mut rouge_sum = RougeScores {
        rouge1: 0.0,
        rouge2: 0.0,
        rouge_l: 0.0,
    };
    let sample = sampling_method(policy);
    for (i, ex) in dev.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SALT_DIVERSITY, i as u64]));
        let y = crate::decoding::decode(policy, &ex.x, &sample, oracle.max_len(), &mut rng)?;
        gens.push(strip_eos(y.ids()));
        inputs.push(ex.x.ids().to_vec());

        let mut greedy_rng = ChaCha8Rng::seed_from_u64(0);
        let g = crate::decoding::decode(
            policy,
            &ex.x,
            &DecodeMethod::Greedy,
            oracle.max_len(),
            &mut greedy_rng,
        )?;
        let r = rouge_scores(&strip_eos(g.ids()), &strip_eos(ex.y.ids()));
        rouge_sum.rouge1 += r.rouge1;
        rouge_sum.rouge2 += r.rouge2;
        rouge_sum.rouge_l += r.rouge_l;
    }
    let n = dev.len() as f64;
    let rouge = RougeScores {
        rouge1: rouge_sum.rouge1 / n,
        rouge2: rouge_sum.rouge2 / n,
        rouge_l: rouge_sum.rouge_l / n,
    };
    let diversity = diversity_stats(&gens, &inputs);

    let report = EvalReport {
        learner: learner.to_string(),
        seed,
        nll,
        histogram,
        sensitivity,
        quality,
        exposure,
        diversity,
        rouge,
    };
    write_json(&paths.eval_report(seed, learner), &report)?;
    Ok(report)
}

/// Scores the configured learner's final checkpoint on dev.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let paths = RunPaths::new(cfg);
    let oracle = load_oracle_artifact(&paths)?;
    let learner = cfg.learner.as_str();
    for &seed in &cfg.seeds {
        let (_, dev_ex) = load_datasets(cfg, &paths, &oracle, seed)?;
        let policy = Policy::load(&require(paths.checkpoint(seed, learner))?)?;
        evaluate_learner(cfg, &paths, &oracle, &dev_ex, &policy, learner, seed)?;
    }
    update_manifest(&paths, cfg)?;
    record_timing(&paths, "evaluate", started.elapsed().as_secs_f64())
}

/// One directional check, judged per seed and passed when at least
/// two-thirds of seeds agree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub per_seed: Vec<bool>,
    pub passed: bool,
}

fn verdict(check: &str, per_seed: Vec<bool>) -> Verdict {
    let hits = per_seed.iter().filter(|b| **b).count();
    let passed = 3 * hits >= 2 * per_seed.len();
    Verdict {
        check: check.to_string(),
        per_seed,
        passed,
    }
}

/// Headline numbers for one (learner, seed) cell of the comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub learner: String,
    pub seed: u64,
    pub dev_nll: f64,
    pub dev_ppl: f64,
    pub greedy_bleu: Option<f64>,
    pub topk20_bleu: Option<f64>,
    pub sweep_spread: f64,
    pub mass_below_005: f64,
    pub mass_at_or_above_5: f64,
    pub quality_mean: f64,
    pub quality_slope: f64,
    pub prefix_nll_slope: f64,
    pub mean_prefix_nll: f64,
}

fn compare_row(report: &EvalReport) -> CompareRow {
    CompareRow {
        learner: report.learner.clone(),
        seed: report.seed,
        dev_nll: report.nll.mean_nll,
        dev_ppl: report.nll.perplexity,
        greedy_bleu: report.sensitivity.bleu_for("greedy"),
        topk20_bleu: report.sensitivity.bleu_for("topk20"),
        sweep_spread: report.sensitivity.spread,
        mass_below_005: report.histogram.mass_below(0.05),
        mass_at_or_above_5: report.histogram.mass_at_or_above(5.0),
        quality_mean: report.quality.mean,
        quality_slope: report.exposure.quality_slope,
        prefix_nll_slope: report.exposure.prefix_nll_slope,
        mean_prefix_nll: report.exposure.mean_prefix_nll,
    }
}

/// Greedy-vs-widest-sampling gap when both are in the sweep, otherwise the
/// whole-sweep spread.
fn headline_spread(row: &CompareRow) -> f64 {
    match (row.greedy_bleu, row.topk20_bleu) {
        (Some(g), Some(t)) => (g - t).abs(),
        _ => row.sweep_spread,
    }
}

/// Teacher-forced loss is flat when ten positions move it by less than a
/// tenth of its mean.
fn prefix_is_flat(row: &CompareRow) -> bool {
    (row.prefix_nll_slope * 10.0).abs() < 0.1 * row.mean_prefix_nll
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub learners: Vec<String>,
    pub rows: Vec<CompareRow>,
    pub verdicts: Vec<Verdict>,
}

/// Full side-by-side recipe: shared data, every learner trained per seed
/// (stems shared, so the likelihood pretrain runs once), the sweep decoded,
/// everything evaluated, and the directional verdicts written to one report.
pub fn compare(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let paths = RunPaths::new(cfg);
    gen_data(cfg)?;
    let oracle = load_oracle_artifact(&paths)?;

    let mut learners = vec![LearnerName::Mle, LearnerName::GoldS, LearnerName::GoldP];
    if !learners.contains(&cfg.learner) {
        learners.push(cfg.learner);
    }

    let mut reports: BTreeMap<(String, u64), EvalReport> = BTreeMap::new();
    for &seed in &cfg.seeds {
        let (train_ex, dev_ex) = load_datasets(cfg, &paths, &oracle, seed)?;
        let trained = train_stages(cfg, &paths, &oracle, &train_ex, &dev_ex, seed, &learners)?;
        for learner in &learners {
            let stem = learner.stages().last().expect("every learner has stages").1;
            let policy = &trained[stem];
            decode_learner(cfg, &paths, &oracle, &dev_ex, policy, stem, seed)?;
            let report = evaluate_learner(cfg, &paths, &oracle, &dev_ex, policy, stem, seed)?;
            reports.insert((stem.to_string(), seed), report);
        }
    }

    let mut rows: Vec<CompareRow> = Vec::new();
    for learner in &learners {
        let stem = learner.stages().last().unwrap().1;
        for &seed in &cfg.seeds {
            rows.push(compare_row(&reports[&(stem.to_string(), seed)]));
        }
    }

    let cell = |learner: &str, seed: u64| -> &CompareRow {
        rows.iter()
            .find(|r| r.learner == learner && r.seed == seed)
            .expect("row exists for every learner/seed")
    };
    let per_seed = |f: &dyn Fn(&CompareRow, &CompareRow) -> bool| -> Vec<bool> {
        cfg.seeds
            .iter()
            .map(|&s| f(cell("gold-s", s), cell("mle", s)))
            .collect()
    };

    let verdicts = vec![
        verdict(
            "gold-s beats mle on greedy dev BLEU-4",
            per_seed(&|g, m| match (g.greedy_bleu, m.greedy_bleu) {
                (Some(a), Some(b)) => a > b,
                _ => false,
            }),
        ),
        verdict(
            "gold-s has higher dev perplexity than mle",
            per_seed(&|g, m| g.dev_ppl > m.dev_ppl),
        ),
        verdict(
            "gold-s decode-sensitivity spread below mle's",
            per_seed(&|g, m| headline_spread(g) < headline_spread(m)),
        ),
        verdict(
            "gold-s holds more token-loss mass below 0.05 nats",
            per_seed(&|g, m| g.mass_below_005 > m.mass_below_005),
        ),
        verdict(
            "gold-s holds more token-loss mass at or above 5 nats",
            per_seed(&|g, m| g.mass_at_or_above_5 > m.mass_at_or_above_5),
        ),
        verdict(
            "mle quality-vs-length slope more negative than gold-s",
            per_seed(&|g, m| m.quality_slope < g.quality_slope),
        ),
        verdict(
            "teacher-forced loss flat across positions for both",
            per_seed(&|g, m| prefix_is_flat(g) && prefix_is_flat(m)),
        ),
    ];

    let report = CompareReport {
        seeds: cfg.seeds.clone(),
        learners: learners.iter().map(|l| l.as_str().to_string()).collect(),
        rows,
        verdicts,
    };
    write_json(&paths.compare_report(), &report)?;
    update_manifest(&paths, cfg)?;
    record_timing(&paths, "compare", started.elapsed().as_secs_f64())
}

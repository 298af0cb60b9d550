//! End-to-end checks of the command-line interface: exit codes, the file
//! layout each subcommand declares, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gold")
}

struct Run {
    code: i32,
    stderr: String,
}

fn gold(config: &Path, args: &[&str]) -> Run {
    let out = Command::new(bin())
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary launches");
    Run {
        code: out.status.code().expect("no signal"),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Toy task: ~200 train examples, a handful of optimizer steps.
fn toy_config(dir: &Path, learner: &str, blocks: &str) -> PathBuf {
    let out_dir = dir.join("runs");
    let text = format!(
        r#"{{
  "oracle": {{"generate": {{"vocab_size": 4, "num_classes": 2, "max_len": 10, "seed": 3}}}},
  "data": {{"train_contexts": 10, "train_per_context": 20,
            "dev_contexts": 4, "dev_per_context": 5, "context_len": 2}},
  "learner": "{learner}",
  {blocks}
  "decode": [{{"method": "greedy"}}, {{"method": "topk", "k": 20}}],
  "eval": {{"quality": {{"mode": "montecarlo", "samples": 8}}, "exposure_samples": 2}},
  "seeds": [1],
  "out_dir": {}
}}"#,
        serde_json::to_string(out_dir.to_str().unwrap()).unwrap()
    );
    let path = dir.join("exp.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_root(out_root: &Path) -> PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out_root)
        .expect("output root exists")
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "exactly one run directory");
    dirs.pop().unwrap()
}

#[test]
fn pipeline_produces_the_declared_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        "mle",
        r#""mle": {"steps": 20, "batch_size": 16, "eval_every": 10},"#,
    );
    for sub in ["gen-data", "train", "decode", "evaluate"] {
        let r = gold(&cfg, &[sub]);
        assert_eq!(r.code, 0, "{sub} failed: {}", r.stderr);
    }
    let root = run_root(&dir.path().join("runs"));
    for rel in [
        "data/oracle.json",
        "data/s1/train.jsonl",
        "data/s1/dev.jsonl",
        "checkpoints/s1/mle.json",
        "reports/s1/train-mle.json",
        "gen/s1/mle-greedy.jsonl",
        "gen/s1/mle-topk20.jsonl",
        "reports/s1/eval-mle.json",
        "manifest.json",
        "timing.json",
    ] {
        assert!(root.join(rel).is_file(), "missing {rel}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap())
            .unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("reports/s1/eval-mle.json"));
    assert!(!artifacts.contains_key("timing.json"));
    assert!(!artifacts.contains_key("manifest.json"));

    // Generations are one JSON object per dev example with the declared keys.
    let gen = std::fs::read_to_string(root.join("gen/s1/mle-greedy.jsonl")).unwrap();
    let lines: Vec<&str> = gen.lines().collect();
    assert_eq!(lines.len(), 20);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in ["x", "y_hat", "method", "seed", "logprob"] {
        assert!(first.get(key).is_some(), "generation line missing {key}");
    }
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    std::fs::write(
        &path,
        r#"{"oracle": {"generate": {}}, "learner": "mle", "mle": {},
           "seeds": [1], "out_dir": "runs", "foo": 1}"#,
    )
    .unwrap();
    let r = gold(&path, &["gen-data"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("foo"), "{}", r.stderr);
}

#[test]
fn missing_seeds_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    std::fs::write(
        &path,
        r#"{"oracle": {"generate": {}}, "learner": "mle", "mle": {}, "out_dir": "runs"}"#,
    )
    .unwrap();
    let r = gold(&path, &["gen-data"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("seeds"), "{}", r.stderr);
}

#[test]
fn evaluate_without_a_checkpoint_exits_3_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        "mle",
        r#""mle": {"steps": 5, "batch_size": 16, "eval_every": 5},"#,
    );
    assert_eq!(gold(&cfg, &["gen-data"]).code, 0);
    let r = gold(&cfg, &["evaluate"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("mle.json"), "{}", r.stderr);
}

#[test]
fn train_before_gen_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        "mle",
        r#""mle": {"steps": 5, "batch_size": 16, "eval_every": 5},"#,
    );
    let r = gold(&cfg, &["train"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("oracle.json"), "{}", r.stderr);
}

#[test]
fn seed_override_narrows_the_run_to_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        "mle",
        r#""mle": {"steps": 5, "batch_size": 16, "eval_every": 5},"#,
    );
    let r = gold(&cfg, &["--seed", "9", "gen-data"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let root = run_root(&dir.path().join("runs"));
    assert!(root.file_name().unwrap().to_string_lossy().ends_with("-s9"));
    assert!(root.join("data/s9/train.jsonl").is_file());
}

#[test]
fn compare_twice_writes_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        "mle",
        r#""mle": {"steps": 8, "batch_size": 16, "eval_every": 4},
           "gold": {"steps": 8, "batch_size": 16, "eval_every": 4, "sync_every": 3},"#,
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let a = gold(
        &cfg,
        &["--out", out_a.to_str().unwrap(), "--quiet", "compare"],
    );
    assert_eq!(a.code, 0, "{}", a.stderr);
    let b = gold(
        &cfg,
        &["--out", out_b.to_str().unwrap(), "--quiet", "compare"],
    );
    assert_eq!(b.code, 0, "{}", b.stderr);

    let reports_a = run_root(&out_a).join("reports");
    let reports_b = run_root(&out_b).join("reports");
    let mut walked = 0;
    compare_trees(&reports_a, &reports_b, &mut walked);
    assert!(
        walked >= 7,
        "expected the full report set, saw {walked} files"
    );

    let compare: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports_a.join("compare.json")).unwrap())
            .unwrap();
    let learners: Vec<&str> = compare["learners"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(learners, ["mle", "gold-s", "gold-p"]);
    assert_eq!(compare["verdicts"].as_array().unwrap().len(), 7);
}

fn compare_trees(a: &Path, b: &Path, walked: &mut usize) {
    for entry in std::fs::read_dir(a).expect("tree exists") {
        let pa = entry.unwrap().path();
        let pb = b.join(pa.file_name().unwrap());
        if pa.is_dir() {
            compare_trees(&pa, &pb, walked);
            continue;
        }
        *walked += 1;
        let ba = std::fs::read(&pa).unwrap();
        let bb = std::fs::read(&pb).unwrap_or_else(|_| panic!("missing twin of {pa:?}"));
        assert_eq!(ba, bb, "bytes differ for {pa:?}");
    }
}

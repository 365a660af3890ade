//! End-to-end runs of the `mgcr` binary on a tiny synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use towe_mgcr::checkpoint::{read_sidecar, sha256_hex};
use towe_mgcr::mgcr::LogRecord;
use towe_mgcr::target_labeler::read_cache;

const TINY: &[&str] = &[
    "--encoder",
    "small",
    "--set",
    "hidden_dim=16",
    "--set",
    "encoder_layers=1",
    "--set",
    "encoder_ffn_dim=32",
    "--set",
    "refiner_dim=16",
    "--set",
    "refiner_layers=1",
    "--set",
    "refiner_ffn_dim=32",
    "--set",
    "unlabeled_batch=8",
    "--set",
    "tagger_epochs=1",
    "--set",
    "sentiment_steps=5",
    "--set",
    "sentiment_batch=8",
    "--epochs",
    "1",
];

fn mgcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgcr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let mut full = args.to_vec();
    full.extend_from_slice(TINY);
    let out = mgcr(&full);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Synthetic data plus the pseudo-target cache in `shared/`.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--size", "50", "--seed", "2", "--out-dir", &s(&root.join("data"))]);
        let f = Self { _dir: dir, root };
        ok(&[
            "pseudo-targets",
            "--labeled",
            &f.data("train.jsonl"),
            "--raw",
            &f.data("raw.txt"),
            "--out-dir",
            &s(&f.root.join("shared")),
        ]);
        f
    }

    fn data(&self, name: &str) -> String {
        s(&self.root.join("data").join(name))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (labeled, lexicon) = (self.data("train.jsonl"), self.data("lexicon.jsonl"));
        let cache = s(&self.path("shared/pseudo_targets.jsonl"));
        let out_dir = s(&self.path(out));
        let mut args = vec![
            "train",
            "--labeled",
            &labeled,
            "--lexicon",
            &lexicon,
            "--pseudo-targets",
            &cache,
            "--out-dir",
            &out_dir,
        ];
        args.extend_from_slice(extra);
        args.extend_from_slice(TINY);
        mgcr(&args)
    }
}

fn read_log(path: &Path) -> Vec<LogRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        ok(&["synth", "--size", "50", "--seed", "7", "--out-dir", &s(&dir.path().join(sub))]);
    }
    for f in ["train.jsonl", "raw.txt", "test.jsonl", "sentiment.jsonl", "lexicon.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
        assert!(!a.is_empty(), "{f}");
    }
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--size", "50", "--out-dir", &s(dir.path())]);
    let missing = s(&dir.path().join("nowhere.txt"));
    let out = mgcr(&[
        "pseudo-targets",
        "--labeled",
        &s(&dir.path().join("train.jsonl")),
        "--raw",
        &missing,
        "--out-dir",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let out = mgcr(&["synth", "--set", "learning_rate=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cache_is_stamped_with_the_tagger_and_reproducible() {
    let f = Fixture::new();
    let (header, instances) = read_cache(&f.path("shared/pseudo_targets.jsonl")).unwrap();
    let blob = std::fs::read(f.path("shared/tagger.bin")).unwrap();
    assert_eq!(header.tagger_hash, sha256_hex(&blob));
    assert_eq!(header.tagger_hash, read_sidecar(&f.path("shared/tagger")).unwrap().blob_sha256);
    assert!(header.kept_sentences <= instances.len());

    ok(&[
        "pseudo-targets",
        "--labeled",
        &f.data("train.jsonl"),
        "--raw",
        &f.data("raw.txt"),
        "--out-dir",
        &s(&f.path("again")),
    ]);
    assert_eq!(
        std::fs::read(f.path("shared/pseudo_targets.jsonl")).unwrap(),
        std::fs::read(f.path("again/pseudo_targets.jsonl")).unwrap()
    );
}

#[test]
fn supervised_only_has_no_consistency_term() {
    let f = Fixture::new();
    let out = f.train("sup", &["--supervised-only"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = read_log(&f.path("sup/train_log.jsonl"));
    let mut steps = 0;
    for r in &log {
        if let LogRecord::Step { l_c, sentences_seen, .. } = r {
            assert_eq!(*l_c, 0.0);
            assert_eq!(*sentences_seen, 0);
            steps += 1;
        }
    }
    assert!(steps > 0);
}

#[test]
fn no_sentiment_runs_without_a_sentiment_checkpoint() {
    let f = Fixture::new();
    let out = f.train("avg", &["--no-sentiment"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(f.path("avg/model.bin").is_file());

    let out = f.train("senti", &[]);
    assert_eq!(out.status.code(), Some(2), "sentiment gate without a checkpoint");
}

#[test]
fn contradictory_ablations_are_rejected() {
    let f = Fixture::new();
    for flags in [
        &["--supervised-only", "--no-word-filter"][..],
        &["--no-sentiment", "--no-sentence-filter"][..],
    ] {
        let out = f.train("bad", flags);
        assert_eq!(out.status.code(), Some(2), "{flags:?}");
    }
}

#[test]
fn eval_reports_and_rejects_a_mismatched_encoder() {
    let f = Fixture::new();
    assert!(f.train("run", &["--no-sentiment"]).status.success());
    let ckpt = s(&f.path("run/model"));
    let test = f.data("test.jsonl");
    let out = mgcr(&["eval", "--checkpoint", &ckpt, "--test", &test, "--out-dir", &s(&f.path("eval"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("eval/eval.json")).unwrap()).unwrap();
    assert!(report["f1"].as_f64().is_some());

    let out = mgcr(&["eval", "--checkpoint", &ckpt, "--test", &test, "--encoder", "pretrained"]);
    assert_ne!(out.status.code(), Some(0));
    let hash = read_sidecar(&f.path("run/model")).unwrap().vocab_hash;
    assert!(String::from_utf8_lossy(&out.stderr).contains(&hash));
}

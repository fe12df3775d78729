//! End-to-end tests of the binary: the adaptation pipeline on tiny fixture
//! corpora, the config/flag precedence rules, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lingua_adapt::bpe::TokenizerModel;
use lingua_adapt::embed::EmbeddingTable;
use lingua_adapt::metrics::MetricsReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lingua-adapt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn lingua-adapt")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail; returns (exit code, parsed stderr record).
fn run_err(dir: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = run(dir, args);
    assert!(
        !out.status.success(),
        "command {args:?} unexpectedly succeeded"
    );
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap_or_default();
    let record: serde_json::Value = serde_json::from_str(line)
        .unwrap_or_else(|_| panic!("stderr is not a JSON record: {stderr:?}"));
    (out.status.code().unwrap(), record)
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

/// Deterministic pseudo-random bilingual fixture corpora, small enough that
/// every pipeline stage finishes in well under a second.
fn fixture_corpora(dir: &Path) {
    let syll = |set: &[&str], n: u64| -> String {
        let mut s = String::new();
        let mut state = n;
        for _ in 0..2 + n % 2 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            s.push_str(set[(state >> 33) as usize % set.len()]);
        }
        s
    };
    let latin: Vec<&str> = vec!["ba", "ce", "di", "fo", "gu", "ha", "ke", "li", "mo", "nu"];
    let cyr: Vec<&str> = vec!["ба", "ве", "ди", "жо", "зу", "ка", "ле", "ми", "но", "пу"];
    let mut base = String::new();
    let mut target = String::new();
    for i in 0..220u64 {
        let b: Vec<String> = (0..9).map(|j| syll(&latin, i * 31 + j)).collect();
        base.push_str(&b.join(" "));
        base.push('\n');
        let t: Vec<String> = (0..7).map(|j| syll(&cyr, i * 37 + j + 7)).collect();
        target.push_str(&t.join(" "));
        target.push('\n');
    }
    write(dir, "base.txt", &base);
    write(dir, "target.txt", &target);
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);

    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "380",
            "--seed",
            "0",
            "--out",
            "base.tok.json",
        ],
    );
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "target.txt",
            "--vocab-size",
            "420",
            "--seed",
            "0",
            "--out",
            "target.tok.json",
        ],
    );
    let merge_out = run_ok(
        dir,
        &[
            "merge-vocab",
            "--base",
            "base.tok.json",
            "--extra",
            "target.tok.json",
            "--out",
            "merged.tok.json",
            "--report",
            "merge_report.json",
        ],
    );
    assert!(merge_out.contains("new tokens"));

    run_ok(
        dir,
        &[
            "train-lm",
            "--tokenizer",
            "base.tok.json",
            "--corpus",
            "base.txt",
            "--steps",
            "30",
            "--warmup",
            "3",
            "--lr",
            "2e-3",
            "--seed",
            "5",
            "--context-k",
            "3",
            "--embed-dim",
            "12",
            "--hidden-h",
            "20",
            "--out",
            "ckpt_base",
            "--loss-log",
            "base_loss.csv",
        ],
    );
    run_ok(
        dir,
        &[
            "init-embeddings",
            "--checkpoint",
            "ckpt_base",
            "--base-tok",
            "base.tok.json",
            "--merged-tok",
            "merged.tok.json",
            "--strategy",
            "mean",
            "--seed",
            "0",
            "--out",
            "ckpt_grown",
        ],
    );
    run_ok(
        dir,
        &[
            "train-lm",
            "--checkpoint",
            "ckpt_grown",
            "--tokenizer",
            "merged.tok.json",
            "--corpus",
            "target.txt",
            "--steps",
            "30",
            "--warmup",
            "3",
            "--lr",
            "2e-3",
            "--warm-start-frac",
            "0.1",
            "--out",
            "ckpt_adapted",
            "--loss-log",
            "adapt_loss.csv",
        ],
    );

    // the merged model subsumes the base one, so base-text encodings agree
    let base_tok = TokenizerModel::load(&dir.join("base.tok.json")).unwrap();
    let merged_tok = TokenizerModel::load(&dir.join("merged.tok.json")).unwrap();
    assert!(merged_tok.vocab_size() > base_tok.vocab_size());
    assert_eq!(merged_tok.encode("bace difo"), base_tok.encode("bace difo"));

    // eval both task kinds and compare the reports
    let mc: String = (0..8)
        .map(|_| r#"{"prompt": "баве", "choices": ["дижо", "qx"], "label": 0}"#)
        .collect::<Vec<_>>()
        .join("\n");
    write(dir, "mc.jsonl", &mc);
    let gen: String = (0..4)
        .map(|_| r#"{"prompt": "баве", "reference": "дижо баве"}"#)
        .collect::<Vec<_>>()
        .join("\n");
    write(dir, "gen.jsonl", &gen);

    let mc_out = run_ok(
        dir,
        &[
            "eval",
            "--checkpoint",
            "ckpt_adapted",
            "--tokenizer",
            "merged.tok.json",
            "--task",
            "mc.jsonl",
            "--kind",
            "mc",
            "--out",
            "mc_report.json",
        ],
    );
    assert!(mc_out.contains("accuracy"));
    run_ok(
        dir,
        &[
            "eval",
            "--checkpoint",
            "ckpt_adapted",
            "--tokenizer",
            "merged.tok.json",
            "--task",
            "gen.jsonl",
            "--kind",
            "gen",
            "--max-tokens",
            "8",
            "--added-from",
            "merge_report.json",
            "--out",
            "gen_report.json",
        ],
    );
    let gen_report = MetricsReport::load(&dir.join("gen_report.json")).unwrap();
    for key in ["bleu", "pct_gen", "throughput"] {
        assert!(gen_report.metrics.contains_key(key), "missing {key}");
    }

    run_ok(
        dir,
        &[
            "compare",
            "--base-report",
            "mc_report.json",
            "--adapted-report",
            "mc_report.json",
            "--out",
            "deltas",
        ],
    );
    let csv = std::fs::read_to_string(dir.join("deltas.csv")).unwrap();
    assert!(csv.starts_with("metric,delta\n"));
    assert!(
        csv.contains("accuracy,0\n"),
        "identical reports must show zero delta: {csv}"
    );
    assert!(dir.join("deltas.json").exists());
}

#[test]
fn train_tokenizer_is_deterministic_and_warns_on_oversized_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);

    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--seed",
            "1",
            "--out",
            "a.json",
        ],
    );
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--seed",
            "1",
            "--out",
            "b.json",
        ],
    );
    assert_eq!(
        std::fs::read(dir.join("a.json")).unwrap(),
        std::fs::read(dir.join("b.json")).unwrap(),
        "same flags and seed must produce identical model files"
    );

    let out = run(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--sample-n",
            "100000",
            "--seed",
            "1",
            "--out",
            "c.json",
        ],
    );
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("warning"),
        "oversized --sample-n must warn: {stderr}"
    );
}

#[test]
fn exit_codes_and_error_records() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);

    let (code, record) = run_err(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "256",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(code, 2);
    assert_eq!(record["kind"], "VocabTooSmall");
    assert!(record["message"].as_str().unwrap().contains("257"));

    let (code, record) = run_err(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "missing.txt",
            "--vocab-size",
            "300",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(code, 2);
    assert_eq!(record["kind"], "FileNotFound");

    let (code, record) = run_err(
        dir,
        &[
            "sweep-vocab",
            "--base",
            "x",
            "--corpus-train",
            "x",
            "--corpus-eval",
            "x",
            "--sizes",
            "100,abc",
            "--out",
            "s",
        ],
    );
    assert_eq!(code, 2);
    assert_eq!(record["kind"], "InvalidArgument");
}

#[test]
fn merge_vocab_self_merge_and_stability() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "320",
            "--seed",
            "0",
            "--out",
            "tok.json",
        ],
    );

    run_ok(
        dir,
        &[
            "merge-vocab",
            "--base",
            "tok.json",
            "--extra",
            "tok.json",
            "--out",
            "self.json",
            "--report",
            "r1.json",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r1.json")).unwrap()).unwrap();
    assert_eq!(report["new_token_count"], 0);
    assert_eq!(
        std::fs::read(dir.join("self.json")).unwrap(),
        std::fs::read(dir.join("tok.json")).unwrap(),
        "self-merge must be the identity"
    );

    run_ok(
        dir,
        &[
            "merge-vocab",
            "--base",
            "tok.json",
            "--extra",
            "tok.json",
            "--out",
            "self2.json",
            "--report",
            "r2.json",
        ],
    );
    assert_eq!(
        std::fs::read(dir.join("r1.json")).unwrap(),
        std::fs::read(dir.join("r2.json")).unwrap(),
        "report must be byte-stable across runs"
    );
}

#[test]
fn sweep_vocab_outputs_and_monotonicity() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "320",
            "--seed",
            "0",
            "--out",
            "base.tok.json",
        ],
    );

    let sweep = [
        "sweep-vocab",
        "--base",
        "base.tok.json",
        "--corpus-train",
        "target.txt",
        "--corpus-eval",
        "target.txt",
        "--sizes",
        "280,330,380",
        "--seed",
        "0",
        "--out",
        "sweep",
    ];
    run_ok(dir, &sweep);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "size,delta_v,avg_tokens_per_doc,tokens_per_byte");
    assert_eq!(rows.len(), 4);
    let avgs: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(
        avgs[0] >= avgs[1] && avgs[1] >= avgs[2],
        "fertility must not rise with size: {avgs:?}"
    );

    let svg = std::fs::read_to_string(dir.join("sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));

    let first = std::fs::read(dir.join("sweep.csv")).unwrap();
    run_ok(dir, &sweep);
    assert_eq!(
        first,
        std::fs::read(dir.join("sweep.csv")).unwrap(),
        "sweep CSV must be byte-stable"
    );

    // a single size still produces a one-row table and a valid plot
    run_ok(
        dir,
        &[
            "sweep-vocab",
            "--base",
            "base.tok.json",
            "--corpus-train",
            "target.txt",
            "--corpus-eval",
            "target.txt",
            "--sizes",
            "300",
            "--seed",
            "0",
            "--out",
            "one",
        ],
    );
    let one = std::fs::read_to_string(dir.join("one.csv")).unwrap();
    assert_eq!(one.lines().count(), 2);
    assert!(std::fs::read_to_string(dir.join("one.svg"))
        .unwrap()
        .starts_with("<svg"));
}

#[test]
fn init_embeddings_mean_rows_and_frozen_body() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--seed",
            "0",
            "--out",
            "base.tok.json",
        ],
    );
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "target.txt",
            "--vocab-size",
            "330",
            "--seed",
            "0",
            "--out",
            "target.tok.json",
        ],
    );
    run_ok(
        dir,
        &[
            "merge-vocab",
            "--base",
            "base.tok.json",
            "--extra",
            "target.tok.json",
            "--out",
            "merged.tok.json",
            "--report",
            "report.json",
        ],
    );
    run_ok(
        dir,
        &[
            "train-lm",
            "--tokenizer",
            "base.tok.json",
            "--corpus",
            "base.txt",
            "--steps",
            "10",
            "--lr",
            "1e-3",
            "--seed",
            "3",
            "--context-k",
            "2",
            "--embed-dim",
            "6",
            "--hidden-h",
            "8",
            "--out",
            "ckpt",
        ],
    );
    run_ok(
        dir,
        &[
            "init-embeddings",
            "--checkpoint",
            "ckpt",
            "--base-tok",
            "base.tok.json",
            "--merged-tok",
            "merged.tok.json",
            "--strategy",
            "mean",
            "--seed",
            "0",
            "--out",
            "grown",
        ],
    );

    assert_eq!(
        std::fs::read(dir.join("ckpt/body.bin")).unwrap(),
        std::fs::read(dir.join("grown/body.bin")).unwrap(),
        "growing the vocabulary must not touch body parameters"
    );

    // every added input-embedding row is the mean of its constituent rows
    let base_tok = TokenizerModel::load(&dir.join("base.tok.json")).unwrap();
    let merged_tok = TokenizerModel::load(&dir.join("merged.tok.json")).unwrap();
    let e_old = EmbeddingTable::load(&dir.join("ckpt/E.embt")).unwrap();
    let e_new = EmbeddingTable::load(&dir.join("grown/E.embt")).unwrap();
    assert_eq!(e_new.vocab_size(), merged_tok.vocab_size());
    for v in base_tok.vocab_size() as u32..merged_tok.vocab_size() as u32 {
        let parts = base_tok.encode_word_bytes(merged_tok.token_bytes(v).unwrap());
        for j in 0..e_old.dim() {
            let mean = parts.iter().map(|&t| e_old.row(t)[j]).sum::<f32>() / parts.len() as f32;
            let got = e_new.row(v)[j];
            assert!(
                (got - mean).abs() <= 1e-6 * mean.abs().max(1.0),
                "row {v} dim {j}"
            );
        }
    }

    // focus without --aux is a user error with the dedicated kind
    let (code, record) = run_err(
        dir,
        &[
            "init-embeddings",
            "--checkpoint",
            "ckpt",
            "--base-tok",
            "base.tok.json",
            "--merged-tok",
            "merged.tok.json",
            "--strategy",
            "focus",
            "--out",
            "g2",
        ],
    );
    assert_eq!(code, 2);
    assert_eq!(record["kind"], "MissingAuxEmbedding");
}

#[test]
fn train_lm_freeze_loss_curve_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // a strongly repetitive corpus the model can actually learn in 60 steps
    let doc = "mamo lilu mamo lilu mamo lilu\n".repeat(60);
    write(dir, "rep.txt", &doc);
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "rep.txt",
            "--vocab-size",
            "280",
            "--seed",
            "0",
            "--out",
            "tok.json",
        ],
    );

    fn train<'a>(out: &'a str, log: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
        let mut args = vec![
            "train-lm",
            "--tokenizer",
            "tok.json",
            "--corpus",
            "rep.txt",
            "--steps",
            "60",
            "--warmup",
            "6",
            "--lr",
            "5e-3",
            "--seed",
            "9",
            "--context-k",
            "3",
            "--embed-dim",
            "8",
            "--hidden-h",
            "12",
            "--out",
            out,
            "--loss-log",
            log,
        ];
        args.extend_from_slice(extra);
        args
    }
    run_ok(dir, &train("ck_a", "a.csv", &[]));
    let csv = std::fs::read_to_string(dir.join("a.csv")).unwrap();
    let losses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 60);
    assert!(
        losses.last().unwrap() < losses.first().unwrap(),
        "loss should fall on the repetitive corpus: {} -> {}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    run_ok(dir, &train("ck_b", "b.csv", &[]));
    assert_eq!(
        std::fs::read(dir.join("a.csv")).unwrap(),
        std::fs::read(dir.join("b.csv")).unwrap(),
        "same flags and seed must produce the identical loss CSV"
    );

    run_ok(dir, &train("ck_frozen", "f.csv", &["--freeze-body"]));
    assert_eq!(
        std::fs::read(dir.join("ck_a/body.bin")).unwrap().len(),
        std::fs::read(dir.join("ck_frozen/body.bin")).unwrap().len()
    );
    // frozen body equals the freshly initialized one: retrain 0 steps to get it
    run_ok(
        dir,
        &[
            "train-lm",
            "--tokenizer",
            "tok.json",
            "--corpus",
            "rep.txt",
            "--steps",
            "0",
            "--lr",
            "1e-3",
            "--seed",
            "9",
            "--context-k",
            "3",
            "--embed-dim",
            "8",
            "--hidden-h",
            "12",
            "--out",
            "ck_init",
        ],
    );
    assert_eq!(
        std::fs::read(dir.join("ck_init/body.bin")).unwrap(),
        std::fs::read(dir.join("ck_frozen/body.bin")).unwrap(),
        "--freeze-body must leave body parameters at their initial values"
    );
    assert_ne!(
        std::fs::read(dir.join("ck_init/body.bin")).unwrap(),
        std::fs::read(dir.join("ck_a/body.bin")).unwrap(),
        "unfrozen training must move body parameters"
    );
}

#[test]
fn config_file_fills_gaps_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);
    write(
        dir,
        "cfg.json",
        r#"{"corpus": "base.txt", "vocab_size": 300, "seed": 4, "out": "from_config.json"}"#,
    );

    run_ok(dir, &["train-tokenizer", "--config", "cfg.json"]);
    assert!(dir.join("from_config.json").exists());

    // the flag wins over the config value
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--config",
            "cfg.json",
            "--vocab-size",
            "290",
            "--out",
            "flagged.json",
        ],
    );
    let tok = TokenizerModel::load(&dir.join("flagged.json")).unwrap();
    assert_eq!(tok.vocab_size(), 290);

    // a config value of the wrong type is a user error
    write(dir, "bad.json", r#"{"vocab_size": "lots"}"#);
    let (code, record) = run_err(
        dir,
        &[
            "train-tokenizer",
            "--config",
            "bad.json",
            "--corpus",
            "base.txt",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(code, 2);
    assert_eq!(record["kind"], "InvalidArgument");

    // a missing required value names the flag
    let (code, record) = run_err(
        dir,
        &["train-tokenizer", "--corpus", "base.txt", "--out", "x.json"],
    );
    assert_eq!(code, 2);
    assert!(record["message"].as_str().unwrap().contains("--vocab-size"));
}

#[test]
fn thread_cap_is_validated_and_respected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture_corpora(dir);

    let out = bin()
        .current_dir(dir)
        .env("LINGUA_ADAPT_THREADS", "zero")
        .args([
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--out",
            "x.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 2);

    let out = bin()
        .current_dir(dir)
        .env("LINGUA_ADAPT_THREADS", "1")
        .args([
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--seed",
            "1",
            "--out",
            "one.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    run_ok(
        dir,
        &[
            "train-tokenizer",
            "--corpus",
            "base.txt",
            "--vocab-size",
            "300",
            "--seed",
            "1",
            "--out",
            "many.json",
        ],
    );
    assert_eq!(
        std::fs::read(dir.join("one.json")).unwrap(),
        std::fs::read(dir.join("many.json")).unwrap(),
        "thread count must not change the trained model"
    );
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo").join(file)
}

fn talkgrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_talkgrade"))
        .args(args)
        .env_remove("TALKGRADE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = talkgrade(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(ws: &Path, with_trees: bool) -> String {
    let talks = demo("talks.jsonl");
    let vectors = demo("vectors.txt");
    let trees = demo("trees.conllu");
    let mut args = vec!["ingest", "--talks", path(&talks), "--vectors", path(&vectors), "--out", path(ws)];
    if with_trees {
        args.extend(["--trees", path(&trees)]);
    }
    ok(&args)
}

fn full_pipeline(ws: &Path) -> Vec<u8> {
    let conf = demo("demo.conf");
    let lex = demo("lexicon.txt");
    let (w, c, l) = (path(ws), path(&conf), path(&lex));
    ingest(ws, true);
    ok(&["debias", "--out", w, "--config", c]);
    ok(&["train", "--out", w, "--model", "word-seq", "--config", c]);
    ok(&["train", "--out", w, "--model", "dep-tree", "--config", c]);
    ok(&["train", "--out", w, "--model", "dep-tree", "--unscaled", "--config", c]);
    ok(&["train", "--out", w, "--model", "svm", "--config", c, "--lexicon", l]);
    ok(&["train", "--out", w, "--model", "lasso", "--config", c, "--lexicon", l]);
    ok(&["eval", "--out", w]);
    std::fs::read(ws.join("metrics.csv")).unwrap()
}

#[test]
fn demo_ingest_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = ingest(dir.path(), true);
    assert!(text.starts_with("talks: 20 (loaded 22, filtered out 2)\n"), "{text}");
    for field in ["total ratings:", "total words:", "total sentences:", "dependency trees: 1440"] {
        assert!(text.contains(field), "missing {field}: {text}");
    }
    assert!(dir.path().join("manifests/ingest.json").exists());
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_pipeline(a.path());
    let second = full_pipeline(b.path());
    assert_eq!(first, second);
    let csv = String::from_utf8(first).unwrap();
    assert!(csv.starts_with("model,category,precision,recall,f_score,accuracy\n"));
    assert_eq!(csv.lines().count(), 1 + 5 * 15);
    for file in ["debias.json", "bundle.bin", "models/word-seq.ckpt", "models/dep-tree.loss.csv", "report.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
    let report = ok(&["report", "--out", path(a.path())]);
    assert!(report.starts_with("Model"));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let out = talkgrade(&["train", "--out", "/nonexistent", "--model", "transformer"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid value 'transformer'"));
}

#[test]
fn tree_model_without_trees_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let w = path(dir.path());
    ingest(dir.path(), false);
    ok(&["debias", "--out", w, "--config", path(&demo("demo.conf"))]);
    let out = talkgrade(&["train", "--out", w, "--model", "dep-tree"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trees required"));
}

#[test]
fn baseline_without_lexicon_fails() {
    let dir = tempfile::tempdir().unwrap();
    let w = path(dir.path());
    ingest(dir.path(), false);
    ok(&["debias", "--out", w, "--test-n", "4", "--dev-fraction", "0.2"]);
    let out = talkgrade(&["train", "--out", w, "--model", "svm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lexicon required"));
}

#[test]
fn stages_out_of_order_name_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = talkgrade(&["debias", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `ingest` first"));
}

#[test]
fn default_test_size_needs_more_talks_than_the_demo() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path(), false);
    let out = talkgrade(&["debias", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient talks: 20 talks cannot reserve 150 for test"));
}

#[test]
fn gradcheck_passes_for_both_models() {
    for model in ["word-seq", "dep-tree"] {
        let text = ok(&["gradcheck", "--model", model, "--seed", "3"]);
        assert!(text.starts_with(&format!("{model}: PASS, max rel err ")), "{text}");
        assert!(text.contains("< 1e-5"), "{text}");
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_talkgrade"))
        .args(["gradcheck", "--model", "word-seq"])
        .env("TALKGRADE_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("TALKGRADE_THREADS must be a positive integer"));
}

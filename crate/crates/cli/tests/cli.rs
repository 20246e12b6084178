use std::path::Path;
use std::process::{Command, Output};

fn nrmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrmf"))
        .args(args)
        .env_remove("NRMF_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nrmf(args);
    assert!(
        out.status.success(),
        "nrmf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = nrmf(args);
    assert!(
        !out.status.success(),
        "nrmf {args:?} unexpectedly succeeded"
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, model_dir) = (root.join("data"), root.join("model"));
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 3\n\n[paths]\ncorpus = {:?}\n\n[train]\nmax_epochs = 1\n",
            s(&data)
        ),
    )
    .unwrap();
    let c = s(&config);

    ok(&["gen-data", "--config", c, "--queries", "60"]);
    for f in [
        "documents.jsonl",
        "queries.jsonl",
        "judgments.tsv",
        "splits.tsv",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    ok(&["train", "--config", c, "--out", s(&model_dir)]);
    let model = model_dir.join("model.json");
    assert!(model.is_file());
    let loss = std::fs::read_to_string(model_dir.join("loss.csv")).unwrap();
    assert!(loss.lines().count() > 1);

    let (eval_model, eval_bm25) = (root.join("eval-model"), root.join("eval-bm25"));
    let line = ok(&[
        "eval",
        "--config",
        c,
        "--model",
        s(&model),
        "--out",
        s(&eval_model),
    ]);
    assert!(line.contains("NDCG@10"), "{line}");
    ok(&[
        "eval",
        "--config",
        c,
        "--baseline",
        "bm25",
        "--out",
        s(&eval_bm25),
    ]);
    for dir in [&eval_model, &eval_bm25] {
        for f in ["run.tsv", "report.json", "report.csv"] {
            assert!(dir.join(f).is_file(), "missing {f} in {}", dir.display());
        }
    }

    let report = eval_model.join("report.json");
    let table = ok(&["compare", s(&report), s(&report)]);
    assert!(table.contains("not significant"), "{table}");
    let table = ok(&[
        "compare",
        s(&report),
        s(&eval_bm25.join("report.json")),
        "--names",
        "nrmf",
        "bm25",
    ]);
    assert!(
        table.contains("NDCG@10") && table.contains("bm25"),
        "{table}"
    );

    let score: f64 = ok(&[
        "score",
        "--config",
        c,
        "--model",
        s(&model),
        "--query",
        "anything",
        "--doc",
        "q00000-d0",
    ])
    .trim()
    .parse()
    .unwrap();
    assert!(score.is_finite());
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--trials", "3"]);
    assert!(out.contains("max relative error"), "{out}");
}

#[test]
fn training_without_a_seed_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let msg = err(&["gen-data", "--out", s(tmp.path())]);
    assert!(msg.contains("seed is required"), "{msg}");
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[train]\nmax_epoch = 3\n").unwrap();
    let msg = err(&["gradcheck", "--config", s(&config)]);
    assert!(msg.contains("max_epoch"), "{msg}");
}

#[test]
fn unknown_baseline_is_rejected() {
    let msg = err(&["eval", "--baseline", "tfidf"]);
    assert!(msg.contains("unknown baseline"), "{msg}");
}

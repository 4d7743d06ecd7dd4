use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sessrec::graphs::{brute_force_global_oracle, oracle_pair_table, GlobalGraph};
use sessrec::synthetic::{planted_sessions, PlantedConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sessrec"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small click log: 120 planted sessions over 20 items, one
/// click per second, sessions an hour apart.
fn write_log(dir: &Path) -> PathBuf {
    let cfg = PlantedConfig { num_items: 20, group: 4, num_sessions: 120, ..PlantedConfig::default() };
    let mut text = String::from("session_id\titem_id\torder_key\n");
    for (n, sess) in planted_sessions(&cfg, 3).iter().enumerate() {
        for (t, item) in sess.iter().enumerate() {
            text.push_str(&format!("s{n}\tp{item}\t{}\n", n * 3600 + t));
        }
    }
    let path = dir.join("clicks.tsv");
    std::fs::write(&path, text).unwrap();
    path
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    bundle: PathBuf,
    graph: PathBuf,
}

fn prepared() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let log = write_log(&root);
    let bundle = root.join("bundle");
    let graph = root.join("graph.jsonl");
    ok(&["preprocess", "--input", s(&log), "--out", s(&bundle), "--min-item-count", "1", "--seed", "4"]);
    ok(&["build-graph", "--bundle", s(&bundle), "--out", s(&graph)]);
    Pipeline { _dir: dir, root, bundle, graph }
}

const SMALL: [&str; 10] = ["--d", "8", "--num-factors", "2", "--max-epochs", "2", "--batch-size", "50", "--lr", "0.01"];

#[test]
fn full_pipeline() {
    let p = prepared();
    for f in ["vocab.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "stats.json", "manifest.json"] {
        assert!(p.bundle.join(f).exists(), "{f} missing");
    }
    assert!(p.root.join("graph.jsonl.manifest.json").exists());

    let run_dir = p.root.join("run");
    let mut args = vec!["train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--out", s(&run_dir)];
    args.extend(SMALL);
    let out = ok(&args);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("epoch=0 loss="), "{}", lines[0]);
    assert!(lines[1].contains(" p20=") && lines[1].contains(" mrr20=") && lines[1].contains(" lr="));
    for f in ["best.ckpt", "last.ckpt", "report.json", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }

    let ckpt = run_dir.join("best.ckpt");
    let eval = ["evaluate", "--checkpoint", s(&ckpt), "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--k", "20"];
    ok(&eval);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap();
    for key in ["k", "p_at_k", "mrr_at_k", "n", "checkpoint_hash"] {
        assert!(metrics.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert!(metrics["mrr_at_k"].as_f64().unwrap() <= metrics["p_at_k"].as_f64().unwrap());
    let first = std::fs::read(run_dir.join("metrics.json")).unwrap();
    ok(&eval);
    assert_eq!(first, std::fs::read(run_dir.join("metrics.json")).unwrap());

    // k = N gives every instance a hit
    let full = p.root.join("full.json");
    ok(&[
        "evaluate", "--checkpoint", s(&ckpt), "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--k", "20", "--out",
        s(&full),
    ]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&full).unwrap()).unwrap();
    assert_eq!(m["p_at_k"].as_f64(), Some(1.0));

    let out = ok(&["predict", "--checkpoint", s(&ckpt), "--graph", s(&p.graph), "--session", "p1,p2", "--topk", "5"]);
    let scores: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 5);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let out = ok(&["predict", "--checkpoint", s(&ckpt), "--graph", s(&p.graph), "--session", "p1", "--topk", "1000"]);
    let total: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-5, "probabilities sum to {total}");

    let bad = run(&["predict", "--checkpoint", s(&ckpt), "--graph", s(&p.graph), "--session", "p1,nope42"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope42"));
}

#[test]
fn preprocess_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["preprocess", "--input", s(&log), "--out", s(out), "--min-item-count", "1", "--seed", "9"]);
    }
    for f in ["vocab.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "train_sessions.jsonl", "stats.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 6);
}

#[test]
fn user_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = run(&["preprocess", "--input", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));

    let p = prepared();
    let out = run(&["build-graph", "--bundle", s(&p.bundle), "--epsilon", "0", "--out", s(&p.root.join("g0.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));

    let r = p.root.join("r");
    let out = run(&["train", "--bundle", s(&p.bundle), "--graph", s(&p.root.join("nope.jsonl")), "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--out", s(&r), "--d", "9", "--num-factors", "2",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // graph built with a different window than the training config
    let g2 = p.root.join("g2.jsonl");
    ok(&["build-graph", "--bundle", s(&p.bundle), "--epsilon", "2", "--out", s(&g2)]);
    let out = run(&["train", "--bundle", s(&p.bundle), "--graph", s(&g2), "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn graph_file_matches_oracle_and_is_stable() {
    let p = prepared();
    let wide = p.root.join("wide.jsonl");
    ok(&["build-graph", "--bundle", s(&p.bundle), "--max-neighbors", "1000", "--out", s(&wide)]);
    let graph = GlobalGraph::read_jsonl(&wide).unwrap();
    let bundle = sessrec::dataset::Bundle::load(&p.bundle).unwrap();
    let oracle = oracle_pair_table(&brute_force_global_oracle(&bundle.train_corpus(), 3));
    assert_eq!(graph.pair_table(), oracle);

    let again = p.root.join("again.jsonl");
    ok(&["build-graph", "--bundle", s(&p.bundle), "--out", s(&again)]);
    assert_eq!(std::fs::read(&p.graph).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn config_file_and_flag_override() {
    let p = prepared();
    let cfg = p.root.join("cfg.toml");
    std::fs::write(&cfg, "d = 8\nnum_factors = 2\nmax_epochs = 3\nbatch_size = 50\n").unwrap();
    let run_dir = p.root.join("run");
    let out = ok(&[
        "train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--config", s(&cfg), "--out", s(&run_dir),
        "--max-epochs", "1",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["max_epochs"], 1);
    assert_eq!(manifest["config"]["d"], 8);

    let bad = p.root.join("bad.toml");
    std::fs::write(&bad, "d = \"wide\"\n").unwrap();
    let out = run(&["train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--config", s(&bad), "--out", s(&run_dir)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resume_continues_the_run() {
    let p = prepared();
    let (a, b) = (p.root.join("a"), p.root.join("b"));
    let base = ["--d", "8", "--num-factors", "2", "--batch-size", "50", "--patience", "10"];
    for (dir, epochs) in [(&a, "3"), (&b, "2")] {
        let mut args = vec!["train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--out", s(dir), "--max-epochs", epochs];
        args.extend(base);
        ok(&args);
    }
    let last = b.join("last.ckpt");
    let out = ok(&[
        "train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--out", s(&b), "--resume", s(&last),
        "--max-epochs", "3",
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("epoch=2 "));
    assert_eq!(std::fs::read(a.join("last.ckpt")).unwrap(), std::fs::read(b.join("last.ckpt")).unwrap());

    let out = run(&[
        "train", "--bundle", s(&p.bundle), "--graph", s(&p.graph), "--out", s(&b), "--resume", s(&last), "--d", "16",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ground(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ground"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn write_config(dir: &Path, name: &str, v: Value) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, v.to_string()).unwrap();
    path
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_train_eval_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let runs = d.join("runs");
    let base = json!({
        "dataset": data.join("dataset.jsonl"),
        "snapshots": data.join("snapshots"),
        "out_dir": runs,
        "synth": {"out_dir": data, "seed": 4, "n_pages": 10, "elements_per_page": 10, "commands_per_page": 4},
    });

    let cfg = write_config(d, "synth.json", base.clone());
    let out = ok(ground(&["synth"], &cfg));
    assert!(out.contains("10 pages, 40 commands"), "{out}");
    assert_eq!(fs::read_dir(data.join("snapshots")).unwrap().count(), 10);

    let stats: Value = serde_json::from_str(&ok(ground(&["stats"], &cfg))).unwrap();
    assert_eq!(stats["pages"], 10);
    assert_eq!(stats["commands"], 40);

    // Retrieval: one logged epoch and a DF table.
    let mut retrieval = base.clone();
    retrieval["model"] = json!("retrieval");
    retrieval["retrieval"] = json!({"alpha": [3, 1]});
    let cfg = write_config(d, "retrieval.json", retrieval);
    ok(ground(&["train"], &cfg));
    let log = jsonl(&runs.join("retrieval_log.jsonl"));
    assert_eq!(log.len(), 1);
    assert!(runs.join("retrieval.df").is_file());
    let out = ok(ground(&["eval"], &cfg));
    assert!(out.starts_with("retrieval on test:"), "{out}");
    let records = jsonl(&runs.join("retrieval_eval_test.jsonl"));
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["top5"].as_array().unwrap().len() <= 5));

    // Embedding: log, timing sidecar, and checkpoint; eval reloads it.
    let mut emb = base.clone();
    emb["model"] = json!("embedding");
    emb["max_epochs"] = json!(2);
    emb["batch_size"] = json!(8);
    emb["seed"] = json!(3);
    emb["embedding"] = json!({"token_dim": 8});
    let cfg = write_config(d, "embedding.json", emb);
    ok(ground(&["train"], &cfg));
    let log = jsonl(&runs.join("embedding_log.jsonl"));
    assert_eq!(log.len(), 2);
    assert_eq!(log[1]["seed"], 3);
    assert!(log[1]["mean_loss"].as_f64().unwrap().is_finite());
    let timing = jsonl(&runs.join("embedding_timing.jsonl"));
    assert_eq!(timing.len(), 2);
    assert!(timing[0]["wall_seconds"].as_f64().unwrap() >= 0.0);
    let first = fs::read(runs.join("embedding.ckpt")).unwrap();
    ok(ground(&["train"], &cfg));
    assert_eq!(fs::read(runs.join("embedding.ckpt")).unwrap(), first, "same seed, same checkpoint");
    let out = ok(ground(&["eval"], &cfg));
    assert!(out.starts_with("embedding on test:"), "{out}");
}

#[test]
fn ablate_writes_text_and_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let runs = d.join("runs");
    let cfg = write_config(
        d,
        "ablate.json",
        json!({
            "dataset": data.join("dataset.jsonl"),
            "snapshots": data.join("snapshots"),
            "out_dir": runs,
            "model": "alignment",
            "max_epochs": 1,
            "alignment": {"token_dim": 8, "conv_channels": 4},
            "synth": {"out_dir": data, "seed": 2, "n_pages": 10, "elements_per_page": 8, "commands_per_page": 3},
        }),
    );
    ok(ground(&["synth"], &cfg));
    let out = ok(ground(&["ablate"], &cfg));
    assert_eq!(out.lines().count(), 5, "{out}");
    let csv = fs::read_to_string(runs.join("alignment_ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "model,variant,split,accuracy,best_epoch");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("alignment,full,test,"));
    assert_eq!(fs::read_to_string(runs.join("alignment_ablation.txt")).unwrap(), out);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = write_config(d, "missing.json", json!({"dataset": d.join("nope.jsonl"), "snapshots": d}));
    let out = ground(&["stats"], &missing);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    let bad = write_config(d, "bad.json", json!({"model": "transformer"}));
    let out = ground(&["train"], &bad);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parsing"));

    let retrieval_ablation = write_config(
        d,
        "r.json",
        json!({"model": "retrieval", "synth": {"out_dir": d.join("data"), "n_pages": 2}, "dataset": d.join("data/dataset.jsonl"), "snapshots": d.join("data/snapshots")}),
    );
    ok(ground(&["synth"], &retrieval_ablation));
    let out = ground(&["ablate"], &retrieval_ablation);
    assert!(!out.status.success());
}

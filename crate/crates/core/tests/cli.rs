use std::path::Path;
use std::process::Command;

fn colactc(args: &[&str], cwd: &Path) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_colactc"))
        .args(args)
        .current_dir(cwd)
        .env("COLACTC_THREADS", "1")
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

const SMALL: &[&str] = &[
    "--set",
    "train_size=120",
    "--set",
    "eval_size=20",
    "--set",
    "max_steps=15",
    "--set",
    "d_model=16",
    "--set",
    "ffn_dim=32",
    "--set",
    "heads=2",
];

#[test]
fn map_reads_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_colactc"))
        .args(["map", "--mapping", "div", "--vocab-size", "9", "--label-size", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"0 1 2 3 4 5 6 7 8\n4\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0 0 0 1 1 1 2 2 2\n1\n");
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, _, err) = colactc(&["train", "--set", "nonsense=1"], dir.path());
    assert!(!ok);
    assert!(err.starts_with("error: ") && err.contains("nonsense"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let (ok, _, err) = colactc(&["train", "--vocab-size", "64", "--label-size", "100"], dir.path());
    assert!(!ok && err.contains("label_size"), "{err}");

    let (ok, _, err) = colactc(&["train", "--mapping", "zigzag"], dir.path());
    assert!(!ok && err.contains("mapping"), "{err}");
}

#[test]
fn train_eval_and_analyze_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--vocab-size",
        "64",
        "--label-size",
        "8",
        "--mapping",
        "mod",
        "--out",
        "run",
        "--deterministic",
    ];
    args.extend_from_slice(SMALL);
    let (ok, stdout, err) = colactc(&args, dir.path());
    assert!(ok, "{err}");
    assert!(stdout.contains("\"status\":\"completed\""));
    for f in ["resolved_config.json", "metrics.jsonl", "model.ckpt", "eval.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["label_size"], 8);
    assert_eq!(resolved["vocab_tgt"], 64);

    let (ok, _, err) = colactc(
        &[
            "gen-data",
            "--vocab-src",
            "64",
            "--vocab-tgt",
            "64",
            "--train-size",
            "10",
            "--eval-size",
            "5",
            "--out",
            "data",
        ],
        dir.path(),
    );
    assert!(ok, "{err}");
    let (ok, stdout, err) = colactc(
        &[
            "analyze",
            "similarity",
            "--checkpoint",
            "run/model.ckpt",
            "--data",
            "data/held_out.jsonl",
            "--dump",
            "1",
            "--out",
            "an",
        ],
        dir.path(),
    );
    assert!(ok, "{err}");
    assert!(stdout.contains("corpus mean similarity"));
    assert!(dir.path().join("an/similarity_matrix.tsv").exists());
    let (ok, stdout, err) = colactc(
        &[
            "analyze",
            "curve",
            "--metrics",
            "run/metrics.jsonl",
            "--field",
            "mle_loss",
            "--window",
            "3",
            "--out",
            "an",
        ],
        dir.path(),
    );
    assert!(ok, "{err}");
    assert_eq!(stdout.lines().count(), 16);

    let (ok, _, err) = colactc(
        &[
            "analyze",
            "curve",
            "--metrics",
            "run/metrics.jsonl",
            "--field",
            "bleu",
            "--out",
            "an",
        ],
        dir.path(),
    );
    assert!(!ok && err.contains("bleu") && err.contains("total_loss"), "{err}");
}

#[test]
fn suite_runs_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let suite = serde_json::json!({
        "base": {"vocab_src": 64, "vocab_tgt": 64, "train_size": 80, "eval_size": 10, "max_steps": 5,
                 "d_model": 16, "ffn_dim": 32, "heads": 2},
        "runs": [
            {"name": "genuine", "mapping": "identity", "label_size": 64},
            {"name": "coarse", "mapping": "mod", "label_size": 8}
        ]
    });
    std::fs::write(dir.path().join("suite.json"), suite.to_string()).unwrap();
    let (ok, _, err) = colactc(&["suite", "--suite", "suite.json", "--out", "sweep"], dir.path());
    assert!(ok, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[1] == "completed"));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let params = header.iter().position(|&h| h == "params").unwrap();
    let genuine: usize = rows[0][params].parse().unwrap();
    let coarse: usize = rows[1][params].parse().unwrap();
    assert_eq!(genuine - coarse, (64 - 8) * 16);
}

#[test]
fn inspect_ctc_prints_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("lat.json"),
        r#"{"probs": [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("z.json"), "[0]").unwrap();
    let (ok, stdout, err) = colactc(
        &["inspect-ctc", "--lattice", "lat.json", "--labels", "z.json"],
        dir.path(),
    );
    assert!(ok, "{err}");
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let p = 0.2 * 0.6 + 0.2 * 0.3 + 0.3 * 0.6;
    assert!((v["nll"].as_f64().unwrap() + f64::ln(p)).abs() < 1e-12);
    assert_eq!(v["feasible"], true);
}

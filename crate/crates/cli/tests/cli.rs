use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_airdecode"));
    c.env_remove("AIRDECODE_CLASSIFIER_URL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn airdecode")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "airdecode {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A toy corpus plus config in a fresh directory.
fn workspace(docs: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["make-toy-corpus", "--out", d, "--docs-per-class", &docs.to_string()]);
    let config = dir.path().join("airdecode.toml");
    (dir, config)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_writes_two_class_manifest_deterministically() {
    let (dir, config) = workspace(200);
    let stdout = ok(&["--config", s(&config), "train"]);
    assert!(stdout.contains("2 label models"), "{stdout}");
    let model = dir.path().join("run/model");
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(model.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["classes"].as_array().unwrap().len(), 2);

    let snapshot = |dir: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let first = snapshot(&model);
    ok(&["--config", s(&config), "train"]);
    assert_eq!(first, snapshot(&model));
}

#[test]
fn missing_corpus_is_named() {
    let (dir, config) = workspace(20);
    fs::remove_file(dir.path().join("negative.txt")).unwrap();
    let out = run(&["--config", s(&config), "train"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("negative.txt"), "{err}");
}

#[test]
fn generation_shape_presets_and_determinism() {
    let (dir, config) = workspace(300);
    ok(&["--config", s(&config), "train"]);
    let gen = |out: &str, jobs: &str| {
        let out = dir.path().join(out);
        ok(&[
            "--config", s(&config), "--out", s(&out), "--seed", "3", "--jobs", jobs,
            "generate", "-n", "50", "--length", "50", "--preset", "sentiment-medium",
            "--overlap-k", "10",
        ]);
        out
    };
    let a = gen("a", "1");
    let records = jsonl(&a.join("generations.jsonl"));
    assert_eq!(records.len(), 50);
    for r in &records {
        assert_eq!(r["n_tokens"], 50);
        assert_eq!(r["text"].as_str().unwrap().split_whitespace().count(), 50);
        assert_eq!(r["omega"], 140.0);
        assert_eq!(r["mode"], "reconstructed");
    }
    assert_eq!(fs::read_dir(a.join("traces")).unwrap().count(), 50);

    let b = gen("b", "1");
    let c = gen("c", "3");
    let texts = |d: &Path| -> Vec<Value> {
        jsonl(&d.join("generations.jsonl")).iter().map(|r| r["text"].clone()).collect()
    };
    assert_eq!(texts(&a), texts(&b));
    assert_eq!(texts(&a), texts(&c));
    assert_eq!(
        fs::read(a.join("traces/0007.jsonl")).unwrap(),
        fs::read(c.join("traces/0007.jsonl")).unwrap()
    );
}

#[test]
fn flags_override_config_and_bad_values_are_rejected() {
    let (dir, config) = workspace(100);
    ok(&["--config", s(&config), "train"]);
    let out = dir.path().join("g");
    ok(&[
        "--config", s(&config), "--out", s(&out), "generate", "--mode", "raw", "--omega", "35",
        "--length", "5", "--target", "negative", "-n", "2", "--overlap-k", "5",
    ]);
    for r in jsonl(&out.join("generations.jsonl")) {
        assert_eq!(r["mode"], "raw");
        assert_eq!(r["omega"], 35.0);
        assert_eq!(r["target"], "negative");
    }
    for bad in [
        vec!["generate", "--mode", "sideways"],
        vec!["generate", "--preset", "nonsense"],
        vec!["generate", "--top-p", "0"],
        vec!["generate", "--target", "neutral"],
    ] {
        let mut args = vec!["--config", s(&config), "--out", s(&out)];
        args.extend(bad.iter().copied());
        assert!(!run(&args).status.success(), "{bad:?} should fail");
    }
}

#[test]
fn eval_report_schema_and_hand_counted_distinctness() {
    let (dir, config) = workspace(100);
    ok(&["--config", s(&config), "train"]);
    let texts = dir.path().join("texts.jsonl");
    fs::write(&texts, "{\"text\": \"the cat the cat\", \"target\": \"positive\"}\n").unwrap();
    let out = dir.path().join("e");
    let stdout = ok(&["--config", s(&config), "--out", s(&out), "eval", "--texts", s(&texts)]);
    assert!(stdout.contains("accuracy"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let m = &report["metrics"];
    for key in ["accuracy", "mean_ppl", "dist1", "dist2", "dist3"] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    assert_eq!(m["dist1"], 0.5);
    assert_eq!(m["dist2"].as_f64().unwrap(), 2.0 / 3.0);
    assert_eq!(m["dist3"], 1.0);
    assert!(m["mean_ppl"].as_f64().unwrap() > 1.0);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("acc,mean_toxicity,ppl,dist1,dist2,dist3,n_texts"));
}

#[test]
fn eval_with_unreachable_classifier_exits_nonzero_and_keeps_report() {
    let (dir, config) = workspace(100);
    ok(&["--config", s(&config), "train"]);
    let gen = dir.path().join("g");
    ok(&["--config", s(&config), "--out", s(&gen), "generate", "-n", "4", "--length", "8", "--overlap-k", "5"]);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = dir.path().join("e");
    let result = bin()
        .args(["--config", s(&config), "--out", s(&out), "eval", "--texts"])
        .arg(gen.join("generations.jsonl"))
        .env("AIRDECODE_CLASSIFIER_URL", format!("http://127.0.0.1:{port}/score"))
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(report["metrics"]["accuracy"].is_null());
    assert_eq!(report["failures"].as_array().unwrap().len(), 4);
    assert!(report["metrics"]["mean_ppl"].as_f64().unwrap() > 1.0);
}

#[test]
fn sweep_grid_and_diagnose_round_trip() {
    let (dir, config) = workspace(200);
    let out = dir.path().join("s");
    ok(&["--config", s(&config), "--out", s(&out), "sweep", "--samples", "2", "--length", "6"]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(jsonl(&out.join("sweep.jsonl")).len(), 16);
    assert!(out.join("sweep.dat").is_file());

    let again = dir.path().join("s2");
    ok(&[
        "--config", s(&config), "--out", s(&again), "--jobs", "2", "sweep", "--samples", "2",
        "--length", "6",
    ]);
    assert_eq!(csv, fs::read_to_string(again.join("sweep.csv")).unwrap());

    ok(&["--config", s(&config), "train"]);
    let gen = dir.path().join("g");
    ok(&["--config", s(&config), "--out", s(&gen), "generate", "-n", "2", "--length", "10", "--overlap-k", "15"]);
    let traces: Vec<PathBuf> = fs::read_dir(gen.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let mut args = vec!["--out".to_string(), s(&gen).to_string(), "diagnose".to_string()];
    args.extend(traces.iter().map(|p| s(p).to_string()));
    let mut args: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = ok(&args);
    assert!(stdout.contains("20 steps compared"), "{stdout}");
    assert!(stdout.contains("largest gap 0e0"), "{stdout}");
    let diag = fs::read_to_string(gen.join("diagnose.csv")).unwrap();
    assert_eq!(diag.lines().count(), 21);

    // A larger k than the trace kept cannot be recomputed.
    args.splice(2..2, ["--overlap-k", "500"]);
    assert!(!run(&args[..]).status.success());
}

#[test]
fn volume_sweep_rejects_volumes_beyond_the_corpus() {
    let (dir, config) = workspace(50);
    let out = dir.path().join("v");
    let res = run(&[
        "--config", s(&config), "--out", s(&out), "sweep", "--samples", "1", "--length", "4",
        "--omegas", "0", "--volumes", "60",
    ]);
    assert!(!res.status.success());
    let ok_run = ok(&[
        "--config", s(&config), "--out", s(&out), "sweep", "--samples", "1", "--length", "4",
        "--omegas", "0,140", "--volumes", "25,50",
    ]);
    assert!(ok_run.contains("volume"));
    assert_eq!(fs::read_to_string(out.join("volume.csv")).unwrap().lines().count(), 9);
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afb_cli::commands::StatsLine;

fn afb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afb"))
        .args(args)
        .env_remove("AFB_THREADS")
        .output()
        .expect("spawn afb")
}

fn ok(args: &[&str]) -> String {
    let out = afb(args);
    assert!(
        out.status.success(),
        "afb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    afb(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path → bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn dataset(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let dir = root.join(name);
    let mut args = vec!["generate", "--out", s(&dir), "--width", "64", "--height", "64"];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

fn stats(dir: &Path) -> Vec<StatsLine> {
    fs::read_to_string(dir.join("stats.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn generate_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(tmp.path(), "a", &["--frames", "2", "--objects", "1", "--seed", "7"]);
    let b = dataset(tmp.path(), "b", &["--frames", "2", "--objects", "1", "--seed", "7"]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 5);
    assert_eq!(sa, sb);
}

#[test]
fn generate_rejects_zero_objects() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&["generate", "--out", s(&tmp.path().join("x")), "--objects", "0"]),
        1
    );
}

#[test]
fn generate_long_video() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("long");
    ok(&[
        "generate",
        "--out",
        s(&dir),
        "--frames",
        "5000",
        "--width",
        "16",
        "--height",
        "16",
        "--objects",
        "1",
    ]);
    assert_eq!(fs::read_dir(dir.join("frames")).unwrap().count(), 5000);
    assert_eq!(fs::read_dir(dir.join("masks")).unwrap().count(), 5000);
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    assert_eq!(code(&["run", "--out", out]), 1);
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["bench", "--stream", "spiral"]), 1);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "budgett = 4\n").unwrap();
    assert_eq!(code(&["bench", "--config", s(&cfg)]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(
        code(&["run", "--data", s(&missing), "--out", s(&tmp.path().join("r"))]),
        2
    );
}

#[test]
fn run_respects_tiny_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", &["--frames", "6", "--seed", "2"]);
    let cfg = tmp.path().join("b.cfg");
    fs::write(&cfg, "budget = 4\n").unwrap();
    let out = tmp.path().join("r");
    ok(&[
        "run",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--policy",
        "afb",
    ]);
    let lines = stats(&out);
    assert_eq!(lines.iter().map(|l| l.frame).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    for l in &lines {
        assert!(l.per_object_bank_size.iter().all(|&n| n <= 4), "{l:?}");
        assert!(l.runtime_ms.is_some());
    }
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 5);
}

#[test]
fn static_run_reproduces_annotation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&[
        "generate",
        "--out",
        s(&data),
        "--frames",
        "10",
        "--motion",
        "static",
        "--seed",
        "3",
    ]);
    let out = tmp.path().join("r");
    ok(&["run", "--data", s(&data), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_str(&ok(&["eval", "--pred", s(&out), "--gt", s(&data)])).unwrap();
    assert!(report["J"]["M"].as_f64().unwrap() >= 0.99, "{report}");
}

#[test]
fn run_is_deterministic_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(
        tmp.path(),
        "d",
        &["--frames", "5", "--seed", "4", "--motion", "sinusoidal"],
    );
    let mut snaps = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = tmp.path().join(name);
        ok(&[
            "run",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--omit-timing",
            "--threads",
            threads,
        ]);
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1]);
    assert_eq!(snaps[0], snaps[2]);
}

#[test]
fn threads_fall_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", &["--frames", "3"]);
    let out = Command::new(env!("CARGO_BIN_EXE_afb"))
        .args(["run", "--data", s(&data), "--out", s(&tmp.path().join("r"))])
        .env("AFB_THREADS", "0")
        .output()
        .unwrap();
    // Zero threads is only rejected if the variable was read.
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", &["--frames", "4", "--seed", "5"]);
    let report_path = tmp.path().join("rep.json");
    ok(&[
        "eval",
        "--pred",
        s(&data),
        "--gt",
        s(&data),
        "--report",
        s(&report_path),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    for m in ["J", "F"] {
        for k in ["M", "R", "D"] {
            assert!(rep[m][k].is_number(), "{m}.{k} missing");
        }
        assert_eq!(rep[m]["M"], 1.0);
    }
    assert_eq!(rep["JF_M"], 1.0);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["eval", "--pred", s(&empty), "--gt", s(&data)]), 2);

    let short = tmp.path().join("short");
    fs::create_dir(&short).unwrap();
    for t in 1..3 {
        let name = format!("{t:06}.pgm");
        fs::copy(data.join("masks").join(&name), short.join(&name)).unwrap();
    }
    assert_eq!(code(&["eval", "--pred", s(&short), "--gt", s(&data)]), 2);
}

#[test]
fn bench_reports() {
    let parse = |out: String| -> serde_json::Value { serde_json::from_str(&out).unwrap() };
    let clustered = parse(ok(&["bench", "--stream", "clustered"]));
    assert!(clustered["merge_fraction"].as_f64().unwrap() >= 0.8, "{clustered}");
    assert!(clustered["throughput"].as_f64().unwrap() > 0.0);
    let uniform = parse(ok(&["bench", "--stream", "uniform", "--omit-timing"]));
    assert!(uniform["merge_fraction"].as_f64().unwrap() <= 0.1, "{uniform}");
    assert!(uniform["evictions"].as_u64().unwrap() > 0);
    assert!(uniform["throughput"].is_null());

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("nomerge.cfg");
    fs::write(&cfg, "epsilon_h = 2\n").unwrap();
    let exact = parse(ok(&[
        "bench",
        "--stream",
        "drifting",
        "--config",
        s(&cfg),
        "--budget",
        "100000",
    ]));
    assert_eq!(exact["oracle_agreement"], 1.0);
}

#[test]
fn ablate_rows_match_request() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", &["--frames", "4", "--seed", "6"]);
    let rep = tmp.path().join("ab.json");
    ok(&[
        "ablate",
        "--data",
        s(&data),
        "--variants",
        "latest,afb_no_urr",
        "--report",
        s(&rep),
    ]);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(&rep).unwrap()).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["latest", "afb_no_urr"]);
    assert_eq!(code(&["ablate", "--data", s(&data), "--variants", "lru"]), 1);
}

#[test]
fn train_scorer_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", &["--frames", "4", "--seed", "8"]);
    let read = |p: &Path| -> serde_json::Value { serde_json::from_slice(&fs::read(p).unwrap()).unwrap() };

    let zero = tmp.path().join("zero.json");
    ok(&["train-scorer", "--data", s(&data), "--steps", "0", "--out", s(&zero)]);
    let z = read(&zero);
    assert_eq!(z["scorer"]["w"], 1.0);
    assert_eq!(z["scorer"]["b"], 0.0);
    assert_eq!(z["loss_curve"].as_array().unwrap().len(), 1);

    let fit = tmp.path().join("fit.json");
    ok(&[
        "train-scorer",
        "--data",
        s(&data),
        "--steps",
        "15",
        "--out",
        s(&fit),
        "--check-grad",
    ]);
    let f = read(&fit);
    let curve: Vec<f64> = f["loss_curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
    assert!(f["grad_check"].as_f64().unwrap() < 1e-4);

    let out = tmp.path().join("r");
    ok(&["run", "--data", s(&data), "--out", s(&out), "--scorer", s(&fit)]);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sslinfer"));
    c.env_remove("SSLINFER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn without(mut v: Value, keys: &[&str]) -> Value {
    for k in keys {
        v.as_object_mut().unwrap().remove(*k);
    }
    v
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn estimate(dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(name);
    let mut args = vec!["estimate", "--seed", "21", "--out", path_str(&out)];
    args.extend_from_slice(extra);
    (run(&args), out)
}

#[test]
fn estimate_writes_the_documented_json_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (labeled, unlabeled) = (fixture("ssl_labeled.csv"), fixture("ssl_unlabeled.csv"));
    let (out, path) = estimate(
        dir.path(),
        "r.json",
        &["--labeled", &labeled, "--unlabeled", &unlabeled, "--method", "sssl", "--component", "3"],
    );
    assert_ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("sssl theta3: estimate"), "{stdout}");
    let v = read_json(&path);
    for key in ["method", "psi", "estimate", "std_error", "ci", "z_stat", "alpha", "n", "N", "p", "diagnostics", "manifest"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["method"], "sssl");
    assert_eq!((v["n"].as_u64(), v["N"].as_u64(), v["p"].as_u64()), (Some(60), Some(120), Some(8)));
    let ci = v["ci"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() < v["estimate"].as_f64().unwrap());
    assert!(v["diagnostics"]["v_l1_l2_ratio"].as_f64().unwrap() == 1.0);
    assert!(v["diagnostics"]["omega_inverse_defect"].as_f64().unwrap() >= 0.0);
    let m = &v["manifest"];
    for key in ["command", "config_hash", "seeds", "version", "generator", "wall_time_secs", "stage_timings", "inputs"] {
        assert!(m.get(key).is_some(), "manifest missing {key}");
    }
    assert_eq!(m["seeds"]["seed"], 21);
    let stages: Vec<&str> = m["stage_timings"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert!(stages.contains(&"b_matrix") && stages.contains(&"inference"), "{stages:?}");
}

#[test]
fn csv_format_carries_a_manifest_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = fixture("supervised_labeled.csv");
    let (out, path) = estimate(dir.path(), "r.csv", &["--labeled", &labeled, "--method", "dlasso1", "--component", "1", "--format", "csv"]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,psi,estimate,std_error,ci_low,ci_high,z_stat,alpha,n,N,p,v_l1_l2_ratio,omega_inverse_defect"
    );
    assert!(lines.next().unwrap().starts_with("dlasso1,,"));
    let manifest = read_json(&dir.path().join("r.csv.manifest.json"));
    assert_eq!(manifest["command"][0], "estimate");
}

#[test]
fn psi_and_unlabeled_collapse_at_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let (labeled, unlabeled) = (fixture("ssl_labeled.csv"), fixture("ssl_unlabeled.csv"));
    let base = ["--labeled", labeled.as_str(), "--component", "2"];
    let with_u = [&base[..], &["--unlabeled", unlabeled.as_str()]].concat();

    let (o1, a) = estimate(dir.path(), "a.json", &[&with_u[..], &["--method", "sssl", "--psi", "0"]].concat());
    let (o2, b) = estimate(dir.path(), "b.json", &[&with_u[..], &["--method", "ddantzig"]].concat());
    assert_ok(&o1);
    assert_ok(&o2);
    assert_eq!(without(read_json(&a), &["manifest", "method", "psi"]), without(read_json(&b), &["manifest", "method", "psi"]));

    let (o3, c) = estimate(dir.path(), "c.json", &[&base[..], &["--method", "sssl", "--psi", "0"]].concat());
    let (o4, d) = estimate(dir.path(), "d.json", &[&base[..], &["--method", "sssl", "--psi", "0.7"]].concat());
    assert_ok(&o3);
    assert_ok(&o4);
    assert_eq!(without(read_json(&c), &["manifest", "psi"]), without(read_json(&d), &["manifest", "psi"]));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = fixture("supervised_labeled.csv");
    let contrast = dir.path().join("v.txt");
    std::fs::write(&contrast, "1, 0, 0\n").unwrap();
    let (out, _) = estimate(dir.path(), "r.json", &["--labeled", &labeled, "--method", "sssl", "--contrast", path_str(&contrast)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("expected p = 8"), "{stderr}");

    let no_seed = run(&["estimate", "--labeled", &labeled, "--method", "sssl", "--component", "1", "--out", "x.json"]);
    assert_eq!(no_seed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_seed.stderr).contains("--seed"));

    let (missing, _) = estimate(dir.path(), "r.json", &["--labeled", "/nonexistent.csv", "--method", "sssl", "--component", "1"]);
    assert_eq!(missing.status.code(), Some(2));
    let (range, _) = estimate(dir.path(), "r.json", &["--labeled", &labeled, "--method", "sssl", "--component", "9"]);
    assert_eq!(range.status.code(), Some(2));
    let (response, _) = estimate(dir.path(), "r.json", &["--labeled", &labeled, "--response", "z", "--method", "sssl", "--component", "1"]);
    assert_eq!(response.status.code(), Some(2));

    let bad_threads = bin()
        .args(["holm", "--input", path_str(&contrast)])
        .env("SSLINFER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("supervised_labeled.csv")).unwrap();
    let mut flat = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            flat.push_str(line);
        } else {
            let (x, _) = line.rsplit_once(',').unwrap();
            flat.push_str(&format!("{x},0"));
        }
        flat.push('\n');
    }
    let path = dir.path().join("flat.csv");
    std::fs::write(&path, flat).unwrap();
    let (out, _) = estimate(dir.path(), "r.json", &["--labeled", path_str(&path), "--method", "dlasso1", "--component", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage 'inference'"));
}

#[test]
fn holm_command() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.txt");
    std::fs::write(&input, "p_value\n0.01\n0.04\n").unwrap();
    let out = run(&["holm", "--input", path_str(&input)]);
    assert_ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "index,p_value,adjusted\n1,0.01,0.02\n2,0.04,0.04\n");

    std::fs::write(&input, "1 1 1").unwrap();
    let dest = dir.path().join("adj.csv");
    assert_ok(&run(&["holm", "--input", path_str(&input), "--out", path_str(&dest)]));
    let text = std::fs::read_to_string(&dest).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",1,1")), "{text}");
    assert!(dir.path().join("adj.csv.manifest.json").exists());

    std::fs::write(&input, "0.5\n1.2\n").unwrap();
    assert_eq!(run(&["holm", "--input", path_str(&input)]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let (labeled, unlabeled) = (fixture("ssl_labeled.csv"), fixture("ssl_unlabeled.csv"));
    let (out, path) = estimate(
        dir.path(),
        "r.json",
        &["--labeled", &labeled, "--unlabeled", &unlabeled, "--method", "dssl", "--component", "1"],
    );
    assert_ok(&out);
    let replay = run(&["replay", path_str(&path)]);
    assert_ok(&replay);
    assert!(String::from_utf8_lossy(&replay.stdout).contains("reproduced 1 file"));
    assert!(dir.path().join("r.replay.json").exists());

    let mut v = read_json(&path);
    v["estimate"] = Value::from(v["estimate"].as_f64().unwrap() + 1e-9);
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    assert_eq!(run(&["replay", path_str(&path)]).status.code(), Some(1));

    // Generated data replays through the standalone manifest.
    let prefix = dir.path().join("gen");
    assert_ok(&run(&["generate", "--model", "1", "--n", "20", "--ratio", "1", "--p", "7", "--seed", "4", "--out", path_str(&prefix)]));
    assert_ok(&run(&["replay", path_str(&dir.path().join("gen.manifest.json"))]));

    // A changed input is refused.
    let copy = dir.path().join("copy.csv");
    std::fs::copy(&labeled, &copy).unwrap();
    let (out, path) = estimate(dir.path(), "s.json", &["--labeled", path_str(&copy), "--method", "dlasso1", "--component", "1"]);
    assert_ok(&out);
    let mut text = std::fs::read_to_string(&copy).unwrap();
    text.push('\n');
    std::fs::write(&copy, text).unwrap();
    assert_eq!(run(&["replay", path_str(&path)]).status.code(), Some(2));
}

#[test]
fn generated_csv_loads_back_with_the_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("g");
    assert_ok(&run(&["generate", "--model", "2", "--n", "30", "--ratio", "2", "--p", "9", "--seed", "8", "--out", path_str(&prefix)]));
    let labeled = std::fs::read_to_string(dir.path().join("g_labeled.csv")).unwrap();
    let unlabeled = std::fs::read_to_string(dir.path().join("g_unlabeled.csv")).unwrap();
    assert_eq!(labeled.lines().count(), 31);
    assert_eq!(unlabeled.lines().count(), 61);
    assert_eq!(labeled.lines().next().unwrap(), "x1,x2,x3,x4,x5,x6,x7,x8,x9,y");
    let meta = read_json(&dir.path().join("g.manifest.json"));
    let truth: Vec<f64> = meta["truth"].as_array().unwrap().iter().map(|t| t.as_f64().unwrap()).collect();
    assert_eq!(truth, vec![1.1, 0.0, 2.4, 4.0, 4.0, 2.0, 0.0, 0.0, 0.0]);
}

/// Compares numbers to a relative 1e-12 and everything else exactly.
fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(u, v)| close(u, v)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, u)| y.get(k).is_some_and(|v| close(u, v)))
        }
        _ => a == b,
    }
}

fn golden(name: &str, args: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = estimate(dir.path(), "r.json", args);
    assert_ok(&out);
    let got = without(read_json(&path), &["manifest"]);
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    if std::env::var_os("SSLINFER_BLESS").is_some() {
        std::fs::write(&golden_path, serde_json::to_vec_pretty(&got).unwrap()).unwrap();
    }
    let want: Value = serde_json::from_slice(&std::fs::read(&golden_path).unwrap()).unwrap();
    assert!(close(&got, &want), "golden {name} differs:\n got {got}\nwant {want}");
}

#[test]
fn golden_semi_supervised_fixture() {
    let (labeled, unlabeled) = (fixture("ssl_labeled.csv"), fixture("ssl_unlabeled.csv"));
    golden(
        "golden_ssl_sssl.json",
        &["--labeled", &labeled, "--unlabeled", &unlabeled, "--method", "sssl", "--component", "3"],
    );
    golden("golden_ssl_dssl.json", &["--labeled", &labeled, "--unlabeled", &unlabeled, "--method", "dssl", "--component", "6"]);
}

#[test]
fn golden_supervised_fixture() {
    let labeled = fixture("supervised_labeled.csv");
    golden("golden_supervised_dlasso1.json", &["--labeled", &labeled, "--method", "dlasso1", "--component", "1"]);
}

#[test]
fn simulate_is_worker_independent_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |prefix: &Path, workers: &str, cap: Option<&str>| {
        let mut c = bin();
        c.args([
            "simulate", "--model", "2", "--n", "60", "--ratio", "1", "--p", "8", "--reps", "3", "--seed", "5",
            "--methods", "dlasso1,sssl", "--workers", workers, "--out", path_str(prefix),
        ]);
        if let Some(cap) = cap {
            c.env("SSLINFER_THREADS", cap);
        }
        c.output().unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&sim(&a, "1", None));
    assert_ok(&sim(&b, "4", Some("2")));
    let csv_a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], "method,target,bias,sd,rmse,half_len,coverage,reps_used,reps_failed");
    assert_eq!(lines.len(), 1 + 2 * 2);
    let (ja, jb) = (read_json(&dir.path().join("a.json")), read_json(&dir.path().join("b.json")));
    assert_eq!(jb["manifest"]["workers"], 2);
    assert_eq!(ja["manifest"]["config_hash"], jb["manifest"]["config_hash"]);
    assert_eq!(without(ja.clone(), &["manifest"]), without(jb, &["manifest"]));
    assert_eq!(ja["records"].as_array().unwrap().len(), 3 * 2 * 2);
    assert_eq!(ja["truth"][2], 2.4);
    assert_ok(&run(&["replay", path_str(&dir.path().join("a.json"))]));

    let bad = bin().args(["simulate", "--model", "3", "--n", "60", "--ratio", "1", "--p", "8", "--reps", "1", "--seed", "1", "--out", "x"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let small_p = bin().args(["simulate", "--model", "1", "--n", "60", "--ratio", "1", "--p", "5", "--reps", "1", "--seed", "1", "--out", "x"]).output().unwrap();
    assert_eq!(small_p.status.code(), Some(2));
}

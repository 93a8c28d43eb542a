use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn biccos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biccos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `relu(x) + shift` on `[−1, 1]`.
fn write_t1(dir: &Path, shift: f64) -> (PathBuf, PathBuf) {
    let net = dir.join("t1.json");
    let spec = dir.join(format!("t1_{shift}.spec.json"));
    fs::write(
        &net,
        r#"{"layers": [{"weights": [[1.0]], "bias": [0.0]}, {"weights": [[1.0]], "bias": [0.0]}]}"#,
    )
    .unwrap();
    fs::write(
        &spec,
        format!(r#"{{"x0": [0.0], "eps": 1.0, "c": [1.0], "c0": {shift}}}"#),
    )
    .unwrap();
    (net, spec)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Drops wall-clock fields at any depth.
fn strip_time(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !matches!(k.as_str(), "time_s" | "elapsed_s" | "mean_time"));
            m.values_mut().for_each(strip_time);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_time),
        _ => {}
    }
}

fn gen(dir: &Path, seed: u64, count: usize, shape: &str) -> PathBuf {
    let out = biccos(&[
        "gen",
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--shape",
        shape,
        "--out",
        s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.json")
}

#[test]
fn t1_positive_margin_is_verified() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = write_t1(dir.path(), 0.1);
    let report = dir.path().join("r.json");
    let out = biccos(&[
        "verify",
        "--network",
        s(&net),
        "--spec",
        s(&spec),
        "--mode",
        "plain",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0);
    let r = read_json(&report);
    assert_eq!(r["status"], "unsat");
    assert!(r["bound"].as_f64().unwrap() >= 0.0);
}

#[test]
fn t1_negative_margin_is_falsified_with_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = write_t1(dir.path(), -0.5);
    let report = dir.path().join("r.json");
    let out = biccos(&[
        "verify",
        "--network",
        s(&net),
        "--spec",
        s(&spec),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 2);
    let r = read_json(&report);
    assert_eq!(r["status"], "falsified");
    let x = r["witness"][0].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&x) && x.max(0.0) - 0.5 < 0.0);
}

#[test]
fn report_schema_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = write_t1(dir.path(), 0.1);
    let out = biccos(&["verify", "--network", s(&net), "--spec", s(&spec)]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "bound",
            "cuts_generated",
            "domains_visited",
            "error",
            "final_pool_size",
            "instance",
            "iterations",
            "mode",
            "num_unstable",
            "resolved_mode",
            "seed",
            "status",
            "strengthen_attempts",
            "strengthen_successes",
            "time_s",
            "timed_out",
            "witness",
        ]
    );
    assert_eq!(r["mode"], "auto");
    assert_eq!(r["resolved_mode"], "biccos-base");
}

#[test]
fn usage_and_input_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = write_t1(dir.path(), 0.1);
    assert_eq!(code(&biccos(&["verify", "--network", s(&net)])), 64);
    assert_eq!(
        code(&biccos(&[
            "verify",
            "--network",
            s(&net),
            "--spec",
            s(&spec),
            "--mode",
            "fast"
        ])),
        64
    );
    assert_eq!(
        code(&biccos(&[
            "verify",
            "--network",
            s(&net),
            "--spec",
            s(&spec),
            "--batch-size",
            "0"
        ])),
        64
    );
    assert_eq!(
        code(&biccos(&[
            "gen",
            "--shape",
            "3-0-1",
            "--out",
            s(dir.path())
        ])),
        64
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"layers\": [").unwrap();
    assert_eq!(
        code(&biccos(&[
            "verify",
            "--network",
            s(&bad),
            "--spec",
            s(&spec)
        ])),
        65
    );
    let wide = dir.path().join("wide.spec.json");
    fs::write(
        &wide,
        r#"{"x0": [0.0, 0.0], "eps": 1.0, "c": [1.0], "c0": 0.0}"#,
    )
    .unwrap();
    assert_eq!(
        code(&biccos(&[
            "verify",
            "--network",
            s(&net),
            "--spec",
            s(&wide)
        ])),
        65
    );

    let missing = dir.path().join("missing.json");
    let out = biccos(&["verify", "--network", s(&missing), "--spec", s(&spec)]);
    assert!(code(&out) > 2);
    assert_eq!(code(&biccos(&["--help"])), 0);
}

/// An UNSAT instance of the seed-11 suite that needs branching.
fn branching_instance(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = read_json(&gen(dir, 11, 12, "3-12-12-1"));
    for e in manifest.as_array().unwrap() {
        if e["label"] != "unsat" {
            continue;
        }
        let net = dir.join(e["network"].as_str().unwrap());
        let spec = dir.join(e["spec"].as_str().unwrap());
        let out = biccos(&[
            "verify",
            "--network",
            s(&net),
            "--spec",
            s(&spec),
            "--mode",
            "plain",
        ]);
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        if r["domains_visited"].as_u64().unwrap() > 1 {
            return (net, spec);
        }
    }
    panic!("no branching UNSAT instance in the seed-11 suite");
}

#[test]
fn forced_timeout_reports_unknown_with_a_bound() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = branching_instance(dir.path());
    let report = dir.path().join("r.json");
    let out = biccos(&[
        "verify",
        "--network",
        s(&net),
        "--spec",
        s(&spec),
        "--mode",
        "biccos-base",
        "--timeout",
        "0",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 1);
    let r = read_json(&report);
    assert_eq!(r["status"], "unknown");
    assert_eq!(r["timed_out"], true);
    assert!(r["bound"].as_f64().unwrap() < 0.0);
}

#[test]
fn repeated_runs_are_identical_except_time() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = branching_instance(dir.path());
    let mut reports = Vec::new();
    for (k, workers) in ["1", "4"].iter().enumerate() {
        let (report, stream) = (
            dir.path().join(format!("r{k}.json")),
            dir.path().join(format!("s{k}.jsonl")),
        );
        let out = biccos(&[
            "verify",
            "--network",
            s(&net),
            "--spec",
            s(&spec),
            "--mode",
            "biccos-mts",
            "--workers",
            workers,
            "--report",
            s(&report),
            "--stats-stream",
            s(&stream),
        ]);
        assert_eq!(code(&out), 0);
        let mut r = read_json(&report);
        strip_time(&mut r);
        let mut lines: Vec<Value> = fs::read_to_string(&stream)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert!(!lines.is_empty());
        lines.iter_mut().for_each(strip_time);
        reports.push((serde_json::to_string(&r).unwrap(), lines));
    }
    assert_eq!(reports[0], reports[1]);
}

fn recompute(rows: &[&Value]) -> (u64, f64, f64) {
    let ok: Vec<&&Value> = rows.iter().filter(|r| r["error"].is_null()).collect();
    let verified = ok.iter().filter(|r| r["status"] == "unsat").count() as u64;
    let mean = ok
        .iter()
        .map(|r| r["time_s"].as_f64().unwrap())
        .sum::<f64>()
        / ok.len() as f64;
    let mut d: Vec<u64> = ok
        .iter()
        .map(|r| r["domains_visited"].as_u64().unwrap())
        .collect();
    d.sort_unstable();
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2] as f64
    } else {
        (d[n / 2 - 1] + d[n / 2]) as f64 / 2.0
    };
    (verified, mean, median)
}

#[test]
fn suite_rows_and_aggregates_agree() {
    let dir = tempfile::tempdir().unwrap();
    let all = read_json(&gen(dir.path(), 5, 3, "2-8-8-1"));
    assert_eq!(all.as_array().unwrap().len(), 3);
    let manifest = dir.path().join("three.json");
    fs::write(
        &manifest,
        serde_json::to_string(
            &serde_json::json!({"instances": all, "modes": ["plain", "biccos-base"]}),
        )
        .unwrap(),
    )
    .unwrap();
    let report = dir.path().join("suite.json");
    let out = biccos(&["suite", "--manifest", s(&manifest), "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for agg in r["aggregates"].as_array().unwrap() {
        let mine: Vec<&Value> = rows
            .iter()
            .filter(|row| row["mode"] == agg["mode"])
            .collect();
        assert_eq!(mine.len(), 3);
        let (verified, mean, median) = recompute(&mine);
        assert_eq!(agg["verified_count"].as_u64().unwrap(), verified);
        assert_eq!(agg["mean_time"].as_f64().unwrap(), mean);
        assert_eq!(agg["median_domains"].as_f64().unwrap(), median);
    }
    let cmp = &r["comparisons"][0];
    assert_eq!(
        (cmp["baseline"].as_str(), cmp["mode"].as_str()),
        (Some("plain"), Some("biccos-base"))
    );
    assert_eq!(cmp["paired"], 3);
}

#[test]
fn cuts_never_lose_verified_instances_on_the_seed11_suite() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), 11, 20, "3-10-10-1");
    let report = dir.path().join("suite.json");
    let run = |jobs: &str, report: &Path| {
        let out = biccos(&[
            "suite",
            "--manifest",
            s(&manifest),
            "--modes",
            "plain,biccos-base",
            "--timeout",
            "20",
            "--jobs",
            jobs,
            "--report",
            s(report),
        ]);
        assert_eq!(code(&out), 0);
        read_json(report)
    };
    let mut r = run("1", &report);
    let aggs = r["aggregates"].as_array().unwrap();
    let plain = aggs[0]["verified_count"].as_u64().unwrap();
    let base = aggs[1]["verified_count"].as_u64().unwrap();
    assert!(base >= plain, "{base} < {plain}");
    assert!(plain > 0);

    let mut parallel = run("3", &dir.path().join("suite3.json"));
    strip_time(&mut r);
    strip_time(&mut parallel);
    assert_eq!(r, parallel);
}

#[test]
fn empty_manifest_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(&manifest, "[]").unwrap();
    let out = biccos(&["suite", "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["rows"].as_array().unwrap().is_empty());
}

#[test]
fn failing_instances_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (net, spec) = write_t1(dir.path(), 0.1);
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        serde_json::to_string(&serde_json::json!([
            {"name": "ok", "network": net.file_name().unwrap().to_str(), "spec": spec.file_name().unwrap().to_str()},
            {"name": "gone", "network": "absent.json", "spec": "absent.json"},
        ]))
        .unwrap(),
    )
    .unwrap();
    let out = biccos(&["suite", "--manifest", s(&manifest), "--modes", "plain"]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows[0]["status"], "unsat");
    assert!(rows[1]["status"].is_null() && rows[1]["error"].is_string());
    assert_eq!(r["aggregates"][0]["error_count"], 1);
}

#[test]
fn generation_is_deterministic_and_loadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), 11, 50, "3-16-16-1");
    gen(b.path(), 11, 50, "3-16-16-1");
    let manifest = read_json(&a.path().join("manifest.json"));
    let entries = manifest.as_array().unwrap();
    assert_eq!(entries.len(), 50);
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 101);
    for name in &names {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    for e in entries {
        let min = e["exact_min"].as_f64().unwrap();
        match e["label"].as_str().unwrap() {
            "unsat" => assert!(min >= 1e-3),
            "sat" => assert!(min <= -1e-3),
            other => panic!("label {other}"),
        }
        // Every pair loads: a zero-budget run parses both files.
        let out = biccos(&[
            "verify",
            "--network",
            s(&a.path().join(e["network"].as_str().unwrap())),
            "--spec",
            s(&a.path().join(e["spec"].as_str().unwrap())),
            "--timeout",
            "0",
        ]);
        assert!(code(&out) <= 2, "{}", String::from_utf8_lossy(&out.stderr));
    }
}

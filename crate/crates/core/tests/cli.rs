mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::config;

fn qkdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdsim"))
        .args(args)
        .output()
        .expect("run qkdsim")
}

fn run(scenario: &str, seed: &str, out: &Path, extra: &[&str]) -> Output {
    let topology = config("topology.json");
    let scenario = config(scenario);
    let mut args = vec![
        "run",
        "--topology",
        topology.to_str().unwrap(),
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    qkdsim(&args)
}

fn last_active_path(out: &Path) -> String {
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    text.lines().last().unwrap().split(',').nth(1).unwrap().to_owned()
}

fn episodes(out: &Path) -> usize {
    fs::read_to_string(out.join("timing.csv")).unwrap().lines().count() - 1
}

#[test]
fn attack_on_link1_ends_on_link2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run("attack-link1.json", "42", &out, &["--deterministic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(last_active_path(&out), "link2");
    assert!(episodes(&out) >= 1);
    for f in ["metrics.csv", "timing.csv", "qpm_log.jsonl", "controller_log.jsonl", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "t,active_path,skr_bps,qber,attack_link1_dbm,attack_link2_dbm,attack_link3_dbm,qpm_state"
    );
    assert_eq!(
        fs::read_to_string(out.join("timing.csv")).unwrap().lines().next().unwrap(),
        "episode,detect_s,controller_s,reinit_s,total_s"
    );
    // 12600 s at one poll per minute.
    assert!((metrics.lines().count() as i64 - 1 - 210).abs() <= 1);
}

#[test]
fn two_attacks_end_on_link3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run("attack-link1-then-link2.json", "42", &out, &["--deterministic"]);
    assert!(o.status.success());
    assert_eq!(last_active_path(&out), "link3");
    assert_eq!(episodes(&out), 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("attack-link1-then-link2.json", "9", &a, &["--deterministic"]).status.success());
    assert!(run("attack-link1-then-link2.json", "9", &b, &["--deterministic"]).status.success());
    for f in ["metrics.csv", "timing.csv", "qpm_log.jsonl", "controller_log.jsonl", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert!(run("attack-link1-then-link2.json", "10", &c, &["--deterministic"]).status.success());
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn summary_timestamp_only_without_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("baseline.json", "1", &a, &["--deterministic"]).status.success());
    assert!(run("baseline.json", "1", &b, &[]).status.success());
    let sa = fs::read_to_string(a.join("summary.txt")).unwrap();
    let sb = fs::read_to_string(b.join("summary.txt")).unwrap();
    assert!(!sa.starts_with("# generated"));
    let (header, rest) = sb.split_once('\n').unwrap();
    assert!(header.starts_with("# generated "), "{header}");
    assert_eq!(rest, sa);
}

#[test]
fn exhaustion_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("attack-all.json", "42", &dir.path().join("a"), &["--deterministic"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("every path failed"));
    let o = run(
        "attack-all.json",
        "42",
        &dir.path().join("b"),
        &["--deterministic", "--allow-exhaustion"],
    );
    assert!(o.status.success());
    let metrics = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().ends_with(",EXHAUSTED"));
}

#[test]
fn qpm_log_flag_moves_the_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let log = dir.path().join("events.jsonl");
    let o = run(
        "attack-link1.json",
        "42",
        &out,
        &["--deterministic", "--qpm-log", log.to_str().unwrap()],
    );
    assert!(o.status.success());
    assert!(!out.join("qpm_log.jsonl").exists());
    let text = fs::read_to_string(&log).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["t", "kind", "path", "detail"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    assert!(text.contains("\"kind\":\"DETECTED\""));
}

#[test]
fn summarize_checks_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let thresholds = config("thresholds.json");
    let good = dir.path().join("good");
    assert!(run("attack-link1.json", "42", &good, &["--deterministic"]).status.success());
    let o = qkdsim(&[
        "summarize",
        "--out",
        good.to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("PASS steady-state SKR"));
    assert!(!text.contains("FAIL"));

    // The baseline run stays on link1 at about 750 b/s: the 950 b/s band fails.
    let base = dir.path().join("base");
    assert!(run("baseline.json", "42", &base, &["--deterministic"]).status.success());
    let o = qkdsim(&[
        "summarize",
        "--out",
        base.to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL steady-state SKR"));

    let o = qkdsim(&[
        "summarize",
        "--out",
        dir.path().join("missing").to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_model_means() {
    let dir = tempfile::tempdir().unwrap();
    let topology = config("topology.json");
    let o = qkdsim(&[
        "sweep",
        "--topology",
        topology.to_str().unwrap(),
        "--link",
        "link2",
        "--from",
        "-30",
        "--to",
        "-5",
        "--step",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("power_dbm,skr_bps,qber"));
    assert_eq!(lines.count(), 26);

    let o = qkdsim(&[
        "sweep",
        "--topology",
        topology.to_str().unwrap(),
        "--link",
        "link7",
        "--from",
        "-30",
        "--to",
        "-5",
        "--step",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown link link7"));
}

#[test]
fn scenario_errors_name_the_file_and_event() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"duration_s": 100, "events": [{"t": 5, "link": "link1", "attack_power_dbm": -50}, {"t": 1, "link": "link2", "attack_power_dbm": -5}]}"#,
    )
    .unwrap();
    let topology = config("topology.json");
    let o = qkdsim(&[
        "run",
        "--topology",
        topology.to_str().unwrap(),
        "--scenario",
        bad.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json: event 1: events out of order"), "{err}");
}

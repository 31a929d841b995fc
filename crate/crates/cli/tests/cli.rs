use std::fs;
use std::process::{Command, Output};

fn dashaff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dashaff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn compare_prints_three_populated_rows() {
    let out = dashaff(&["compare", "--synth", "test1", "--seed", "7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("Method"));
    for (line, method) in lines[1..].iter().zip(["AFF", "avg-last-3", "EWMA"]) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells.len(), 5, "{line}");
        assert_eq!(cells[0], method);
        assert!(cells[4].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn compare_csv_has_one_row_per_method() {
    let out = dashaff(&["compare", "--synth", "test4", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("method,bitrate_changes,stall_events,stall_time_s,mean_bitrate_kbps"));
}

#[test]
fn malformed_profile_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "time_s,bandwidth_kbps\n0,1000\n# note\n10,fast\n").unwrap();
    let out = dashaff(&["run", "--profile", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("parse error at line 4"), "{err}");
}

#[test]
fn run_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("p.csv");
    fs::write(&profile, "0,3000\n40,700\n80,2500\n").unwrap();
    let report = dir.path().join("r.json");
    let trace = dir.path().join("t.csv");
    let out = dashaff(&[
        "run",
        "--profile",
        profile.to_str().unwrap(),
        "--segments",
        "60",
        "--out",
        report.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["mean_bitrate_kbps"].as_f64().unwrap() > 0.0);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 61);
}

#[test]
fn fairness_reports_jfi() {
    let out = dashaff(&["fairness", "--clients", "4", "--seed", "2"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let jfi = json["jfi"].as_f64().unwrap();
    assert!(jfi > 0.25 && jfi <= 1.0);
    assert_eq!(json["per_client_avg_kbps"].as_array().unwrap().len(), 4);
}

#[test]
fn stats_of_builtin_profile() {
    let out = dashaff(&["stats", "--profile", "fairness-table3", "--json"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["max_mbps"].as_f64().unwrap(), 22.0);
    assert_eq!(json["min_mbps"].as_f64().unwrap(), 6.0);
}

#[test]
fn rejects_missing_profile_source() {
    let out = dashaff(&["run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("--profile or --synth"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dcmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmon")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const THREE_REGIMES: &str = r#"{
  "duration_s": 9000,
  "seed": 7,
  "segments": [
    {"length_s": 3000, "mode": "Idle", "target_rho": 0.9, "traffic_mean_pps": 60, "power_mean_w": 1624, "traffic_sd": 1.0, "power_sd": 0.15},
    {"length_s": 3000, "mode": "CpuIntensive", "target_rho": -0.9, "traffic_mean_pps": 30, "power_mean_w": 1629, "traffic_sd": 1.0, "power_sd": 0.15},
    {"length_s": 3000, "mode": "CpuAndNetwork", "target_rho": 0.9, "traffic_mean_pps": 90, "power_mean_w": 1634, "traffic_sd": 1.0, "power_sd": 0.15}
  ]
}"#;

const FLAT_POWER: &str = r#"{
  "duration_s": 1800,
  "seed": 1,
  "segments": [
    {"length_s": 1800, "mode": "NetworkIntensive", "target_rho": 0.5, "traffic_mean_pps": 20, "power_mean_w": 1630, "traffic_sd": 3.0, "power_sd": 0.0}
  ]
}"#;

fn generate(dir: &Path, scenario: &str) -> (Vec<PathBuf>, PathBuf) {
    let spec = dir.join("scenario.json");
    fs::write(&spec, scenario).unwrap();
    let out = dir.join("gen");
    let o = dcmon(&["generate", "--scenario", s(&spec), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let listed: Vec<PathBuf> = String::from_utf8(o.stdout).unwrap().lines().map(PathBuf::from).collect();
    let (pcaps, power) = listed.split_at(listed.len() - 1);
    (pcaps.to_vec(), power[0].clone())
}

fn event_kinds(csv: &Path) -> Vec<String> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect()
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = dcmon(&["correlate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn help_exits_zero() {
    let o = dcmon(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("report"));
}

#[test]
fn missing_input_is_data_error() {
    let o = dcmon(&["detect", "--correlation", "/nonexistent/corr.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn tuples_without_origin_is_usage_error() {
    let o = dcmon(&["correlate", "--tuples", "t.csv", "--power", "p.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn constant_power_gives_undefined_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (pcaps, power) = generate(dir.path(), FLAT_POWER);
    let stream = dir.path().join("stream.csv");
    let mut args = vec!["merge", "--out", s(&stream)];
    args.extend(pcaps.iter().map(|p| s(p)));
    assert!(dcmon(&args).status.success());

    let o = dcmon(&["correlate", "--stream", s(&stream), "--power", s(&power)]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("undefined")), "{out}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("undefined"));
}

#[test]
fn report_recovers_three_regimes_and_matches_stepwise_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (pcaps, power) = generate(dir.path(), THREE_REGIMES);
    let out = dir.path().join("report");
    let dataset = dir.path().join("dataset");
    let mut args = vec!["--dataset-dir", s(&dataset), "report", "--power", s(&power), "--out-dir", s(&out)];
    args.extend(pcaps.iter().map(|p| s(p)));
    let o = dcmon(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        event_kinds(&out.join("events.csv")),
        ["CorrelatedPeriod", "AnticorrelatedPeriod", "CorrelatedPeriod"]
    );
    for f in ["power_mean.csv", "traffic_mean.csv", "correlation.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(dataset.join("manifest.json").is_file());

    // merge -> indicators -> correlate -> detect gives the same result.
    let stream = dir.path().join("stream.csv");
    let mut args = vec!["merge", "--out", s(&stream)];
    args.extend(pcaps.iter().map(|p| s(p)));
    assert!(dcmon(&args).status.success());
    let tuples = dir.path().join("tuples.csv");
    let o = dcmon(&["indicators", "--stream", s(&stream), "--out", s(&tuples)]);
    assert!(o.status.success());
    let origin = String::from_utf8(o.stderr)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("origin_us=").map(str::to_string))
        .unwrap();
    let corr = dir.path().join("corr.csv");
    let o = dcmon(&[
        "correlate", "--tuples", s(&tuples), "--origin-us", &origin, "--power", s(&power), "--out", s(&corr),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&corr).unwrap(), fs::read(out.join("correlation.csv")).unwrap());
    let events = dir.path().join("events.csv");
    let o = dcmon(&["detect", "--correlation", s(&corr), "--power", s(&power), "--out", s(&events)]);
    assert!(o.status.success());
    assert_eq!(fs::read(&events).unwrap(), fs::read(out.join("events.csv")).unwrap());

    // Rerunning with the same inputs reproduces the files.
    let again = dir.path().join("again");
    let mut args = vec!["report", "--power", s(&power), "--out-dir", s(&again)];
    args.extend(pcaps.iter().map(|p| s(p)));
    assert!(dcmon(&args).status.success());
    for f in ["power_mean.csv", "traffic_mean.csv", "correlation.csv", "events.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    // Persisting the same span twice conflicts.
    let mut args = vec!["--dataset-dir", s(&dataset), "report", "--power", s(&power), "--out-dir", s(&again)];
    args.extend(pcaps.iter().map(|p| s(p)));
    let o = dcmon(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("store"));

    // Prune everything far in the future.
    let o = dcmon(&[
        "--dataset-dir", s(&dataset), "prune", "--trace-days", "0", "--indicator-months", "0", "--power-months", "0",
        "--now-us", "4102444800000000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["kept"], 0);
    assert!(!report["removed"].as_array().unwrap().is_empty());
}

#[test]
fn graph_writes_all_exports() {
    let dir = tempfile::tempdir().unwrap();
    let (pcaps, _) = generate(dir.path(), FLAT_POWER);
    let stream = dir.path().join("stream.csv");
    let mut args = vec!["merge", "--dedup-window-us", "1000", "--out", s(&stream)];
    args.extend(pcaps.iter().map(|p| s(p)));
    assert!(dcmon(&args).status.success());
    let out = dir.path().join("graph");
    let o = dcmon(&["graph", "--stream", s(&stream), "--top-k", "3", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("nodes.csv")).unwrap().lines().count(), 9);
    assert!(fs::read_to_string(out.join("graph.dot")).unwrap().starts_with("graph enclosure {"));
    let relevance = fs::read_to_string(out.join("relevance.csv")).unwrap();
    assert_eq!(relevance.lines().filter(|l| l.starts_with("node,")).count(), 3);
}

#[test]
fn mismatched_offsets_are_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (pcaps, _) = generate(dir.path(), FLAT_POWER);
    let o = dcmon(&["merge", "--offset-us", "5", s(&pcaps[0]), s(&pcaps[1])]);
    assert_eq!(o.status.code(), Some(1));
}

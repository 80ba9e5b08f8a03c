use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdwan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdwan")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn simulate_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    sdwan(&args)
}

#[test]
fn simulate_writes_report_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(dir.path(), &["--spr", "atns", "--qos", "fw", "--sabe", "off"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["report.csv", "intervals.csv", "trace.csv", "spr_policy.csv", "qos_policy.csv"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "class,loss_sat_pct,delay_sat_pct,mean_loss_pct,mean_delay_s");
    assert_eq!(lines.len(), 5);
}

#[test]
fn missing_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = sdwan(&["validate", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("cannot read scenario"), "{msg}");
    // the OS error is printed once
    assert_eq!(msg.matches("os error").count(), 1, "{msg}");
}

#[test]
fn same_seed_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = simulate_into(dir.path(), &["--seed", "7"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
}

#[test]
fn estimate_replays_a_simulated_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(dir.path(), &["--spr", "mlu", "--qos", "ls", "--sabe", "on"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = dir.path().join("trace.csv");
    let est_dir = dir.path().join("est");
    let out = sdwan(&["estimate", "--trace", trace.to_str().unwrap(), "--out", est_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cross-traffic relative error"), "{stdout}");
    let estimates = fs::read_to_string(est_dir.join("estimates.csv")).unwrap();
    let rows = estimates.lines().count() - 1;
    let trace_rows = fs::read_to_string(&trace).unwrap().lines().count() - 1;
    assert_eq!(rows, trace_rows);
}

#[test]
fn trace_without_loss_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    fs::write(
        &trace,
        "link,interval_end_s,delay_s,jitter_s,throughput_mbps\nh1-s1-mpls_a,10,0.02,0.001,1.5\n",
    )
    .unwrap();
    let out = sdwan(&["estimate", "--trace", trace.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing column `loss`"), "{}", stderr(&out));
}

#[test]
fn empty_mode_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdwan(&["sweep", "--spr", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_runs_on_small_inputs_and_rejects_large_ones() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.csv");
    fs::write(
        &small,
        "group,link,demand_mbps\nh1-s1-office,h1-s1-mpls_a,3\nh1-s1-bulk,h1-s1-mpls_a,4\nh1-s1-office,h1-s1-internet,2\n",
    )
    .unwrap();
    let out = sdwan(&["optimize-qos", "--demands", small.to_str().unwrap(), "--mode", "oracle", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let large = dir.path().join("large.csv");
    fs::write(
        &large,
        "group,link,demand_mbps\nh1-s1-office,h1-s1-mpls_a,3\nh1-s1-office,h1-s1-mpls_b,3\nh1-s1-office,h1-s1-internet,2\n",
    )
    .unwrap();
    let out = sdwan(&["optimize-qos", "--demands", large.to_str().unwrap(), "--mode", "oracle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

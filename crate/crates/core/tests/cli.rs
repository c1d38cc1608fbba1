use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[workload]
duration = 0.001
[table]
rows = 512
chunk_count = 8
";

fn islands(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_islands")).args(args).output().expect("binary runs")
}

fn config(dir: &Path) -> String {
    let path = dir.join("small.conf");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_metrics_and_commit_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("out");
    let o = islands(&["run", &cfg, "--seed", "7", "--mode", "shared", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("mode,seed,duration_s,"));
    assert!(lines[1].starts_with("shared,7,"));
    let log = fs::read_to_string(out.join("commitlog.jsonl")).unwrap();
    assert!(log.lines().count() > 0);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("commit_ts").is_some());
    }

    let o = islands(&["run", &cfg, "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json[0]["mode"], "islands");
}

#[test]
fn run_prints_to_stdout_without_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let a = islands(&["run", &cfg, "--set", "txn_clients=2"]);
    let b = islands(&["run", &cfg, "--set", "txn_clients=2"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn sweep_and_isolation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("sweep");
    let o = islands(&["sweep", &cfg, "--param", "analytical_clients", "--values", "1,2,4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 4);

    let o = islands(&["sweep", &cfg, "--param", "analytical_clients", "--values"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);

    let o = islands(&["isolation", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("isolation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "mode,txn_alone,txn_together,txn_retention,analytics_alone,analytics_together,analytics_retention");
    assert_eq!(lines.len(), 4);
}

#[test]
fn validate_reports_each_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = islands(&["validate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    for mode in ["shared", "dual_shared", "islands"] {
        assert!(err.contains(&format!("{mode}: ok (")), "{err}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());

    let missing = dir.path().join("nope.conf");
    let o = islands(&["run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "[workload]\nread_only = 2\n").unwrap();
    let o = islands(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("workload.mix"), "{}", stderr(&o));

    for args in [
        vec!["run", cfg.as_str(), "--mode", "hybrid"],
        vec!["run", cfg.as_str(), "--set", "rows"],
        vec!["run", cfg.as_str(), "--set", "no_such_key=1"],
        vec!["sweep", cfg.as_str(), "--param", "no_such_key", "--values", "1"],
    ] {
        assert_eq!(islands(&args).status.code(), Some(1), "{args:?}");
    }

    // an output path that cannot be a directory is a runtime failure
    let file = dir.path().join("occupied");
    fs::write(&file, "").unwrap();
    let o = islands(&["run", &cfg, "--out", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

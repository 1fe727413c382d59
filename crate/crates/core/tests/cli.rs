//! End-to-end runs of the command-line binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bikeshare_sim::config::load_json;
use bikeshare_sim::UsersConfig;
use common::designed_dir;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bikeshare-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn designed(file: &str) -> String {
    designed_dir().join(file).to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_users(dir: &Path, rate: &str) -> std::path::PathBuf {
    let users = dir.join("users.json");
    ok(&[
        "gen-users",
        "--entry-points",
        &designed("entry_points.json"),
        "--global",
        &designed("global.json"),
        "--rate-per-hour",
        rate,
        "--seed",
        "7",
        "--out",
        p(&users),
    ]);
    users
}

#[test]
fn simulate_then_analyze_reproduces_the_csvs() {
    let tmp = TempDir::new().unwrap();
    let users = gen_users(tmp.path(), "20");
    let run = tmp.path().join("run");
    let stdout = ok(&[
        "simulate",
        "--global",
        &designed("global.json"),
        "--stations",
        &designed("stations.json"),
        "--users",
        p(&users),
        "--out",
        p(&run),
    ]);
    assert!(stdout.contains("seed=1 "), "{stdout}");

    let again = tmp.path().join("again");
    let stdout = ok(&[
        "analyze",
        "--history",
        p(&run.join("history.jsonl")),
        "--out",
        p(&again),
        "--check",
    ]);
    assert!(stdout.contains("audit: ok"));
    for f in ["metrics.csv", "stations.csv", "users.csv"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_users_output_loads_back() {
    let tmp = TempDir::new().unwrap();
    let users: UsersConfig = load_json(&gen_users(tmp.path(), "30")).unwrap();
    assert!(!users.users.is_empty());
    assert!(users.users.windows(2).all(|w| w[0].time_instant <= w[1].time_instant));
    assert!(users.users.iter().all(|u| u.user_type == "INFORMED"));

    let log = tmp.path().join("trips.csv");
    fs::write(&log, "hour,origin_station,destination_station\n0,1,2\n1,3,4\n2,5,999\n").unwrap();
    let out = tmp.path().join("from_log.json");
    let res = bin(&[
        "gen-users",
        "--trip-log",
        p(&log),
        "--stations",
        &designed("stations.json"),
        "--global",
        &designed("global.json"),
        "--user-type",
        "UNINFORMED",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("skipped 1 trip"));
    let users: UsersConfig = load_json(&out).unwrap();
    assert_eq!(users.users.len(), 2);
    assert!(users.users[1].time_instant >= 3600.0 && users.users[1].time_instant < 7200.0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_station_names_the_station() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(designed("stations.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["stations"][3]["initialBikes"] = 25.into();
    let id = v["stations"][3]["id"].as_u64().unwrap();
    let stations = tmp.path().join("stations.json");
    fs::write(&stations, v.to_string()).unwrap();
    let users = gen_users(tmp.path(), "10");
    let out = bin(&[
        "simulate",
        "--global",
        &designed("global.json"),
        "--stations",
        p(&stations),
        "--users",
        p(&users),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("(id {id}).initialBikes")), "{err}");
}

#[test]
fn no_users_gives_header_only_metrics() {
    let tmp = TempDir::new().unwrap();
    let users = tmp.path().join("users.json");
    fs::write(&users, r#"{"users": []}"#).unwrap();
    let run = tmp.path().join("run");
    ok(&[
        "simulate",
        "--global",
        &designed("global.json"),
        "--stations",
        &designed("stations.json"),
        "--users",
        p(&users),
        "--out",
        p(&run),
    ]);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1, "{metrics}");
}

#[test]
fn small_sweep_writes_one_file_per_rate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--global",
        &designed("global.json"),
        "--stations",
        &designed("stations.json"),
        "--entry-points",
        &designed("entry_points.json"),
        "--rates",
        "10,40",
        "--seeds",
        "2",
        "--out",
        p(&out),
    ]);
    for rate in ["10", "40"] {
        let text = fs::read_to_string(out.join(format!("metrics_rate_{rate}.csv"))).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("seed,"));
        assert_eq!(lines.count(), 2);
    }
}

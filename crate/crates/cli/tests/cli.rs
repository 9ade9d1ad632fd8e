use std::path::PathBuf;
use std::process::{Command, Output};

fn d2pc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2pc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("d2pc-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn simulate_writes_trajectory_csv() {
    let out = d2pc(&["simulate", "--benchmark", "two_mass", "--nsim", "5", "--noise", "0.01"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,r_1,u_1,y_1,y_nom_1,solver_status");
    assert_eq!(lines.count(), 5);
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let args = ["simulate", "--benchmark", "four_tank", "--nsim", "6", "--noise", "0.1", "--seed", "3"];
    assert_eq!(stdout(&d2pc(&args)), stdout(&d2pc(&args)));
}

#[test]
fn identify_writes_model_file() {
    let dir = scratch_dir("identify");
    let model = dir.join("model.txt");
    let out = d2pc(&["identify", "--benchmark", "two_mass", "--nbar", "4", "--nd", "2", "--out", model.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&model).unwrap();
    assert!(text.contains("nbar,4"));
    assert!(text.contains("episodes,2"));
}

#[test]
fn experiment_prints_cell_and_per_trial_csv() {
    let dir = scratch_dir("experiment");
    let csv = dir.join("trials.csv");
    let out = d2pc(&[
        "experiment",
        "--benchmark",
        "four_tank",
        "--trials",
        "2",
        "--nsim",
        "10",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("fr=0"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("trial,seed,failed,mae"));
    assert!(text.lines().any(|l| l.starts_with("mean,")));
}

#[test]
fn table_writes_csv() {
    let dir = scratch_dir("table");
    let csv = dir.join("t4.csv");
    let out = d2pc(&["table", "4", "--trials", "1", "--nsim", "10", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn unknown_benchmark_exits_with_usage_code() {
    let out = d2pc(&["simulate", "--benchmark", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn unknown_table_exits_with_usage_code() {
    let out = d2pc(&["table", "42", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_io_code() {
    let out = d2pc(&["simulate", "--nsim", "3", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

//! End-to-end checks of the `wetbeam` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wetbeam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wetbeam"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        "experiment = \"cli-tiny\"\nm = 9\nn = 1\nk = 1\nrealizations = 1\n\
         architectures = [\"its\"]\n",
    )
    .unwrap();
    path
}

#[test]
fn validate_accepts_a_consistent_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_config(dir.path());
    let out = wetbeam(&["validate", "--config", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok: cli-tiny"), "stdout: {stdout}");
}

#[test]
fn validate_rejects_unknown_keys_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "does_not_exist = 1\n").unwrap();
    let out = wetbeam(&["validate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn run_writes_the_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_config(dir.path());
    let out = wetbeam(
        &["run", "--config", path.to_str().unwrap(), "--out", "out", "--seed", "7"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(results.starts_with(
        "experiment,architecture,sweep_value,realization,seed,total_power_W,\
         total_power_dBW,min_received_power_W,iterations,wall_ms"
    ));
    assert_eq!(results.lines().count(), 2, "header plus one record");
    assert!(dir.path().join("out/aggregates.csv").exists());
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 7"), "manifest records the seed override");
}

#[test]
fn set_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_config(dir.path());
    let out = wetbeam(
        &[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--out",
            "out",
            "--set",
            "experiment=renamed",
            "--set",
            "seed=11",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(results.lines().nth(1).unwrap().starts_with("renamed,"), "{results}");
}

#[test]
fn invalid_override_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_config(dir.path());
    let out = wetbeam(
        &["run", "--config", path.to_str().unwrap(), "--set", "m=not-a-number"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wetbeam(&["run", "--preset", "fig99"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

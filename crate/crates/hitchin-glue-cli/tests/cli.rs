//! End-to-end tests driving the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hitchin-glue"));
    // Tests control the cache location explicitly.
    cmd.env_remove("HITCHIN_GLUE_CACHE");
    cmd
}

/// Cache shared by the read-only tests, so each profile solves once.
fn shared_cache() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

/// Small but convergent solver settings, for test speed.
const FAST: &[&str] = &["--grid-points", "400", "--tolerance", "1e-9"];

fn run(args: &[&str], out: &Path, cache: &Path) -> Output {
    bin()
        .args(args)
        .args(FAST)
        .arg("--out")
        .arg(out)
        .arg("--cache")
        .arg(cache)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

#[test]
fn solve_toda_writes_artifacts_and_cache_round_trips() {
    let cache = tempfile::tempdir().unwrap();
    let out1 = tempfile::tempdir().unwrap();
    let first = run(&["solve-toda", "--K", "2"], out1.path(), cache.path());
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    assert!(stdout(&first).contains("solved"));
    let csv1 = read(out1.path(), "toda_K2.csv");
    assert!(csv1.starts_with(b"r,u_1,u_2\n"));
    let json1 = read(out1.path(), "toda_K2.json");

    // A warm run hits the cache and reproduces the artifacts exactly.
    let out2 = tempfile::tempdir().unwrap();
    let second = run(&["solve-toda", "--K", "2"], out2.path(), cache.path());
    assert!(second.status.success());
    assert!(stdout(&second).contains("cache hit"));
    assert_eq!(csv1, read(out2.path(), "toda_K2.csv"));
    assert_eq!(json1, read(out2.path(), "toda_K2.json"));
}

#[test]
fn cache_env_var_wins_over_flag() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["solve-toda", "--K", "2"])
        .args(FAST)
        .arg("--out")
        .arg(out.path())
        .arg("--cache")
        .arg(flag_dir.path())
        .env("HITCHIN_GLUE_CACHE", env_dir.path())
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let entries = |dir: &Path| std::fs::read_dir(dir).unwrap().count();
    assert!(entries(env_dir.path()) > 0, "env cache dir not populated");
    assert_eq!(entries(flag_dir.path()), 0, "flag dir should be shadowed");
}

#[test]
fn corrupt_cache_degrades_to_a_warned_miss() {
    let cache = tempfile::tempdir().unwrap();
    let out1 = tempfile::tempdir().unwrap();
    let first = run(&["solve-toda", "--K", "2"], out1.path(), cache.path());
    assert!(first.status.success());
    let entry: PathBuf = std::fs::read_dir(cache.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .expect("cache entry written");
    std::fs::write(&entry, b"{ not json").unwrap();

    let out2 = tempfile::tempdir().unwrap();
    let second = run(&["solve-toda", "--K", "2"], out2.path(), cache.path());
    assert!(second.status.success(), "stderr: {}", stderr(&second));
    assert!(stderr(&second).contains("corrupt"));
    assert_eq!(read(out1.path(), "toda_K2.csv"), read(out2.path(), "toda_K2.csv"));
}

#[test]
fn error_sweep_reports_positive_decay() {
    let out = tempfile::tempdir().unwrap();
    let output = run(
        &["error-sweep", "--partition", "2", "--t", "3:6:1"],
        out.path(),
        shared_cache(),
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_slice(&read(out.path(), "decay_report.json")).unwrap();
    assert!(report["delta"].as_f64().unwrap() > 0.0);
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert!(report["config_hash"].is_string());
    let csv = read(out.path(), "decay.csv");
    assert!(csv.starts_with(b"t,l2_norm,block_1\n"));
    assert!(stdout(&output).contains("PASS"));
}

#[test]
fn indicial_emits_the_exact_root_table() {
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["indicial", "--partition", "2,1,1", "--j", "2"])
        .arg("--out")
        .arg(out.path())
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("S0: none"));
    assert!(text.contains("Sinf: -1/2 -1/4 1/4 1/2"));
    let expected = "i,j,b_ij,c_ij,roots_zero,roots_infinity\n\
                    1,2,0,1/4,,-1/2 1/2\n\
                    1,3,0,1/8,,-1/4 1/4\n\
                    1,4,0,1/8,,-1/4 1/4\n\
                    2,3,0,-1/8,,-1/4 1/4\n\
                    2,4,0,-1/8,,-1/4 1/4\n\
                    3,4,0,0,,\n";
    assert_eq!(read(out.path(), "indicial.csv"), expected.as_bytes());
}

#[test]
fn strata_prints_the_verdict() {
    let valid = bin()
        .args(["strata", "--n", "3", "--g", "2", "--N2", "12", "--N3", "0"])
        .output()
        .unwrap();
    assert!(valid.status.success());
    assert_eq!(stdout(&valid), "VALID\n");

    let invalid = bin()
        .args(["strata", "--n", "3", "--g", "2", "--N2", "11"])
        .output()
        .unwrap();
    assert!(invalid.status.success());
    assert_eq!(stdout(&invalid), "INVALID\n");

    let oversized = bin()
        .args(["strata", "--n", "3", "--g", "2", "--N5", "1"])
        .output()
        .unwrap();
    assert_eq!(oversized.status.code(), Some(2));
}

#[test]
fn exit_codes_separate_parse_and_numeric_failures() {
    // Rank 0 is rejected before any numerics.
    let parse = bin()
        .args(["solve-toda", "--K", "0", "--no-cache"])
        .output()
        .unwrap();
    assert_eq!(parse.status.code(), Some(2));
    assert!(stderr(&parse).contains("\"kind\":\"parse\""));

    // An unknown flag is a usage error.
    let usage = bin().args(["solve-toda", "--bogus"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    // An unreachable tolerance fails in the solver.
    let numeric = bin()
        .args([
            "solve-toda",
            "--K",
            "2",
            "--no-cache",
            "--grid-points",
            "100",
            "--tolerance",
            "1e-30",
            "--max-iterations",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(numeric.status.code(), Some(3));
    assert!(stderr(&numeric).contains("\"kind\":\"pipeline\""));
}

#[test]
fn growth_reports_the_profile_exponent() {
    let out = tempfile::tempdir().unwrap();
    let output = run(
        &["growth", "--partition", "2", "--t", "1,2"],
        out.path(),
        shared_cache(),
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let table: serde_json::Value =
        serde_json::from_slice(&read(out.path(), "growth.json")).unwrap();
    let exponent = table["exponent"].as_f64().unwrap();
    assert!((0.5..0.8).contains(&exponent), "exponent {exponent}");
    assert!(read(out.path(), "growth.csv").starts_with(b"t,sup_a,sup_da\n"));
}

#[test]
fn limit_check_reports_decreasing_deviation() {
    let out = tempfile::tempdir().unwrap();
    let output = run(
        &["limit-check", "--partition", "3,2", "--j", "2", "--t", "4,16"],
        out.path(),
        shared_cache(),
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let table: serde_json::Value =
        serde_json::from_slice(&read(out.path(), "limit.json")).unwrap();
    let devs: Vec<f64> = table["max_per_t"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(devs[1] < devs[0], "deviation did not decrease: {devs:?}");
    assert!(stdout(&output).contains("monotone decreasing: yes"));
    assert!(read(out.path(), "limit.csv").starts_with(b"t,block,deviation\n"));
}

#[test]
fn model_emits_profile_and_samples() {
    let out = tempfile::tempdir().unwrap();
    let output = run(
        &["model", "--partition", "2", "--t", "2"],
        out.path(),
        shared_cache(),
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let profile = read(out.path(), "model_profile.csv");
    assert!(profile.starts_with(b"|z|,entry_1,entry_2\n"));
    let samples = String::from_utf8(read(out.path(), "model_samples.csv")).unwrap();
    assert!(samples.starts_with("re_z,im_z,a_1,a_2,re_phi_1_1"));
    assert_eq!(samples.lines().count(), 9);
    let meta: serde_json::Value =
        serde_json::from_slice(&read(out.path(), "run_meta.json")).unwrap();
    assert_eq!(meta["command"], "model");
}

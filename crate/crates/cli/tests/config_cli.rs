//! End-to-end checks of the binary: exit codes (0 completed, 1 solver
//! failure, 2 config error), validate never writing files, flag
//! overrides, and bit-identical reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftkin"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn list_scenarios_prints_all_names() {
    let out = bin().arg("list-scenarios").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in [
        "exb-drift",
        "gradb-drift",
        "mu-invariance",
        "gc2d",
        "pic-run",
        "defect-scan",
        "convergence",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn validate_accepts_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "scenario = gc2d\n\n[gc2d]\nnodes = 32\n").unwrap();
    let out = run_in(dir.path(), &["validate", "--config", "run.cfg"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("scenario = gc2d"));
    assert!(text.contains("nodes = 32"));
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "validate must not create files");
}

#[test]
fn validate_reports_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        "scenario = warp\n[epsilon]\nvalue = -0.1\nvalue = 0.2\n[domain]\nnodes = 100\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["validate", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("unknown scenario"), "{err}");
    assert!(err.contains("(0, 1)"), "{err}");
    assert!(err.contains("line 4") && err.contains("duplicate"), "{err}");
    assert!(err.contains("power of two"), "{err}");
}

#[test]
fn run_needs_a_config_or_scenario() {
    let out = bin().arg("run").output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn bad_epsilon_flag_is_a_config_error() {
    let out = bin()
        .args(["run", "--scenario", "exb-drift", "--epsilon", "1.5"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epsilon"));
}

#[test]
fn unknown_scenario_flag_is_a_config_error() {
    let out = bin().args(["run", "--scenario", "sideways"]).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown scenario"));
}

#[test]
fn completed_run_exits_zero_and_writes_into_out() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("mu.cfg"),
        "scenario = mu-invariance\n[orbit]\nt_end = 0.5\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["run", "--config", "mu.cfg", "--out", "results"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("PASS"));
    assert!(dir.path().join("results/orbit_0.csv").exists());
}

#[test]
fn scenario_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("base.cfg"),
        "scenario = gc2d\n[field]\nmodel = bump\n[orbit]\nt_end = 0.2\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--config", "base.cfg", "--scenario", "mu-invariance", "--out", "o"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("o/orbit_0.csv").exists());
    assert!(!dir.path().join("o/gc2d_diag.csv").exists());
}

#[test]
fn solver_abort_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // The ramp hits b = 0 at the starting point, so the drift orbit
    // aborts immediately.
    fs::write(
        dir.path().join("abort.cfg"),
        "scenario = mu-invariance\n[field]\nmodel = ramp\ngrad = -0.2, 0\n[orbit]\nx = 5, 0\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["run", "--config", "abort.cfg", "--out", "o"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("solver error"));
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("pic.cfg"),
        "scenario = pic-run\n\n[domain]\nnodes = 8\n\n[pic]\nparticles = 64\nsteps = 30\noutput_every = 10\nseed = 7\nloading = random\n",
    )
    .unwrap();
    for target in ["a", "b"] {
        let out = run_in(dir.path(), &["run", "--config", "pic.cfg", "--out", target]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in ["diagnostics.csv", "snapshot_final.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // A different seed must change the particle data.
    let out = run_in(
        dir.path(),
        &["run", "--config", "pic.cfg", "--out", "c", "--seed", "8"],
    );
    assert_eq!(code(&out), 0);
    let a = fs::read(dir.path().join("a/snapshot_final.json")).unwrap();
    let c = fs::read(dir.path().join("c/snapshot_final.json")).unwrap();
    assert_ne!(a, c, "seed override had no effect");
}

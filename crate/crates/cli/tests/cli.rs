use std::path::Path;
use std::process::{Command, Output};

const GOOD: &str = r#"
name = "bf"

[problem]
kind = "butterfly"

[initial]
point = [0.6, -0.4]

[solver]
k = 1
eta = 0.05
tau = 0.1
grad_tol = 1e-8
max_iters = 4000

[metric]
kind = "spectral"
epsilon = 0.5
"#;

fn phisd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phisd")).args(args).current_dir(cwd).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn run_writes_outputs_and_exits_by_status() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", GOOD);
    let out = phisd(&["run", &good], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ConvergedIndexK"));
    assert!(dir.path().join("out/bf/trace.csv").exists());
    assert!(dir.path().join("out/bf/summary.json").exists());

    let wrong = write(dir.path(), "wrong.toml", &GOOD.replace("point = [0.6, -0.4]", "reference = \"min_left\""));
    assert_eq!(phisd(&["run", &wrong, "--quiet"], dir.path()).status.code(), Some(2));

    let blowup = GOOD.replace("eta = 0.05", "eta = 50.0").replace("kind = \"spectral\"\nepsilon = 0.5", "kind = \"identity\"");
    let blowup = write(dir.path(), "blowup.toml", &blowup);
    assert_eq!(phisd(&["run", &blowup, "--quiet"], dir.path()).status.code(), Some(3));

    let out = phisd(&["run", &good, "--max-iters", "2", "--out", "short"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("short/trace.csv").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &GOOD.replace("grad_tol", "tolerance"));
    let out = phisd(&["run", &bad], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(phisd(&["run", "missing.toml"], dir.path()).status.code(), Some(1));
}

#[test]
fn suite_reports_worst_member() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "good.toml", GOOD);
    write(dir.path(), "short.toml", &GOOD.replace("max_iters = 4000", "max_iters = 2"));
    let manifest = write(dir.path(), "suite.toml", "name = \"s\"\nconfigs = [\"good.toml\", \"short.toml\"]\n");
    let out = phisd(&["suite", &manifest, "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.starts_with("config,problem,n,metric,iterations,status,rate,wall_time"));
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("res/good/summary.json").exists());
}

#[test]
fn verify_and_listings() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", GOOD);
    let out = phisd(&["verify", &good, "--points", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("verify: pass"));

    let problems = String::from_utf8_lossy(&phisd(&["list-problems"], dir.path()).stdout).into_owned();
    assert!(problems.contains("allen_cahn") && problems.contains("chain"));
    let metrics = String::from_utf8_lossy(&phisd(&["list-metrics"], dir.path()).stdout).into_owned();
    assert!(metrics.contains("block_jacobi") && metrics.contains("shifted_operator"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sigmak"))
}

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/hyperboloid2d.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The example config with some top-level keys replaced.
fn variant(dir: &Path, name: &str, edits: &[(&str, Value)]) -> PathBuf {
    let mut v = read_json(&example());
    for (k, val) in edits {
        v[*k] = val.clone();
    }
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn solve_into(out: &Path) -> Output {
    run(&["solve", "--config", example().to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

#[test]
fn solve_hyperboloid() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve_into(dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let s = read_json(&dir.path().join("summary.json"));
    assert_eq!(s["converged"], true);
    let h = s["h"].as_f64().unwrap();
    assert!(s["max_error"].as_f64().unwrap() <= 0.25 * h * h);
    assert!(s["timing"]["wall_seconds"].as_f64().is_some());
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count() as u64, s["newton_iterations"].as_u64().unwrap());
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(csv.starts_with("i,j,x1,x2,value\n"));
}

#[test]
fn summary_is_byte_identical_apart_from_timing() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&solve_into(a.path())), 0);
    assert_eq!(code(&solve_into(b.path())), 0);
    let strip = |p: &Path| {
        let mut v = read_json(&p.join("summary.json"));
        v.as_object_mut().unwrap().remove("timing");
        v.to_string()
    };
    assert_eq!(strip(a.path()), strip(b.path()));
    assert_eq!(
        std::fs::read(a.path().join("solution.csv")).unwrap(),
        std::fs::read(b.path().join("solution.csv")).unwrap()
    );
}

#[test]
fn config_guards_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let steep = variant(dir.path(), "steep.json", &[("phi", serde_json::json!({"slope": [1.0, 0.0], "offset": 0.0}))]);
    let o = run(&["solve", "--config", steep.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("boundary data not spacelike"));

    let high_k = variant(dir.path(), "k3.json", &[("k", 3.into())]);
    let o = run(&["solve", "--config", high_k.to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let o = run(&["solve", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn nonconvergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "short.json", &[("solver", serde_json::json!({"max_newton": 1, "homotopy_steps": 1}))]);
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 2);
    assert_eq!(read_json(&dir.path().join("summary.json"))["converged"], false);
}

#[test]
fn verify_after_solve() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into(dir.path())), 0);
    let o = run(&["verify", "--config", example().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = read_json(&dir.path().join("reports.json"));
    let names: Vec<&str> = r["reports"].as_array().unwrap().iter().map(|x| x["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gradient_bound", "comparison", "c0_sandwich", "identity_suite"]);
    assert!(r["reports"].as_array().unwrap().iter().all(|x| x["passed"] == true && x["status"] == "passed"));
    assert!(r["curvature"]["kappa_interior"].as_f64().is_some());
}

#[test]
fn tampered_solution_fails_the_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into(dir.path())), 0);
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
        } else {
            let c: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            let r2 = c[2] * c[2] + c[3] * c[3];
            let bump = 0.1 * (1.0 - r2 / 0.49).max(0.0).powi(2);
            out.push_str(&format!("{},{},{:?},{:?},{:?}", c[0], c[1], c[2], c[3], c[4] + bump));
        }
        out.push('\n');
    }
    let tampered = dir.path().join("tampered.csv");
    std::fs::write(&tampered, out).unwrap();
    let o = run(&[
        "verify",
        "--config",
        example().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--solution",
        tampered.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&o), 3);
    let r = read_json(&dir.path().join("reports.json"));
    let c0 = r["reports"].as_array().unwrap().iter().find(|x| x["name"] == "c0_sandwich").unwrap();
    assert_eq!(c0["status"], "failed");
    assert_eq!(c0["witnesses"][1]["node"], serde_json::json!([32, 32]));
}

#[test]
fn verify_rejects_a_solution_from_another_grid() {
    let dir = tempfile::tempdir().unwrap();
    let coarse = variant(dir.path(), "coarse.json", &[("h", 0.04375.into())]);
    let o = run(&["solve", "--config", coarse.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 0);
    let o = run(&["verify", "--config", example().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_synthetic_identity_suite_without_a_solve() {
    let dir = tempfile::tempdir().unwrap();
    let verify = serde_json::json!({
        "gradient": false, "c0": false, "comparison": false, "curvature": false,
        "identity": true, "synthetic_samples": 2000,
        "lu_probe": {"k": 2, "n": 3, "l": 1, "epsilon": 0.1, "delta": 0.3333333333333333, "delta0": 0.5, "trials": 500}
    });
    let cfg = variant(dir.path(), "synthetic.json", &[("verify", verify), ("seed", Value::Null)]);
    let args = ["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"];
    // sampling without a seed is a config error
    assert_eq!(code(&run(&args)), 1);
    let mut with_seed = args.to_vec();
    with_seed.extend(["--seed", "5"]);
    assert_eq!(code(&run(&with_seed)), 0);
    let r = read_json(&dir.path().join("reports.json"));
    assert_eq!(r["reports"][0]["name"], "identity_suite");
    assert_eq!(r["reports"][0]["parameters"]["samples"], 2000.0);
    assert!(r["lu_probe"]["delta_prime"].as_f64().unwrap() > 0.0);
    let first = std::fs::read(dir.path().join("reports.json")).unwrap();
    assert_eq!(code(&run(&with_seed)), 0);
    assert_eq!(first, std::fs::read(dir.path().join("reports.json")).unwrap());
}

#[test]
fn sweep_hyperboloid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "sweep.json", &[("h", serde_json::json!([0.04375, 0.021875, 0.0109375]))]);
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_json(&dir.path().join("sweep.json"));
    for r in t["error_ratios"].as_array().unwrap() {
        let r = r.as_f64().unwrap();
        assert!(r > 3.2 && r < 4.8, "{r}");
    }
    assert_eq!(t["stability"].as_array().unwrap().len(), 2);
    assert!(t["stability"].as_array().unwrap().iter().all(|r| r["passed"] == true));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn sweep_needs_two_spacings() {
    let o = run(&["sweep", "--config", example().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn oracles() {
    let o = run(&["oracle", "subset-sigma"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("sigma_3([2.0, 3.0, 5.0, 7.0]) = 247"));
    let o = run(&["oracle", "maclaurin"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.9148542155"));
    for name in ["umbilic-frame", "fd-jacobian", "radial-ode"] {
        assert_eq!(code(&run(&["oracle", name])), 0);
    }
    assert_eq!(code(&run(&["oracle", "nope"])), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["solve"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

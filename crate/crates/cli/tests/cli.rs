//! End-to-end checks of the `ioa` binary: artifacts, manifests, exit codes,
//! and determinism across worker counts.

use std::path::Path;
use std::process::Command;

fn ioa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ioa"))
}

fn reach_args(out: &Path, workers: &str) -> Vec<String> {
    [
        "reach",
        "--field",
        "linear1d",
        "--set",
        "field_params.lambda=2",
        "--set",
        "run.mode=nominal",
        "--lo",
        "-1",
        "--hi",
        "1",
        "--delta",
        "0.001",
        "--seed-point",
        "0",
        "--r",
        "1",
        "--h",
        "0.05",
        "--workers",
        workers,
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

/// Centers of the cells in a CSV artifact (last column).
fn centers_1d(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.rsplit(',').next().unwrap().trim().parse().unwrap())
        .collect()
}

#[test]
fn reach_linear_artifacts_and_span() {
    let dir = tempfile::tempdir().unwrap();
    let status = ioa().args(reach_args(dir.path(), "2")).status().unwrap();
    assert!(status.success());

    // x' = -2x + g, |g| <= 1: the reachable set closes on (-0.5, 0.5).
    let over = centers_1d(&dir.path().join("over.csv"));
    let lo = over.iter().cloned().fold(f64::MAX, f64::min);
    let hi = over.iter().cloned().fold(f64::MIN, f64::max);
    assert!((lo + 0.5).abs() < 0.03, "over lower end {lo}");
    assert!((hi - 0.5).abs() < 0.03, "over upper end {hi}");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "reach");
    assert_eq!(manifest["workers"], 2);
    assert!(manifest["wall_ms"].as_u64().is_some());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["escaped_window"], false);
}

#[test]
fn reach_deterministic_across_worker_counts() {
    let d1 = tempfile::tempdir().unwrap();
    let d4 = tempfile::tempdir().unwrap();
    assert!(ioa().args(reach_args(d1.path(), "1")).status().unwrap().success());
    assert!(ioa().args(reach_args(d4.path(), "4")).status().unwrap().success());
    for name in ["over.csv", "under.csv"] {
        let a = std::fs::read_to_string(d1.path().join(name)).unwrap();
        let b = std::fs::read_to_string(d4.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between worker counts");
    }
}

#[test]
fn unknown_field_refused_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = ioa()
        .args([
            "reach",
            "--field",
            "no_such_field",
            "--lo",
            "-1",
            "--hi",
            "1",
            "--delta",
            "0.01",
            "--seed-point",
            "0",
            "--r",
            "0.1",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.starts_with("ioa: refused:"), "stderr: {err}");
}

#[test]
fn window_escape_reports_non_convergence_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // Window much smaller than the reachable set: the over-approximation
    // must hit the boundary and the run must report non-convergence.
    let output = ioa()
        .args([
            "reach",
            "--field",
            "linear1d",
            "--lo",
            "-0.1",
            "--hi",
            "0.1",
            "--delta",
            "0.001",
            "--seed-point",
            "0",
            "--r",
            "1",
            "--h",
            "0.05",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.starts_with("ioa: non-convergence:"), "stderr: {err}");
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(
        &cfg,
        "[field]\nname = linear1d\n\n[field_params]\nlambda = 1\n\n\
         [grid]\nlo = -1\nhi = 1\ndelta = 0.001\n\n[seed]\npoint = 0\n\n\
         [run]\nr = 0.5\nh = 0.05\nmode = nominal\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    // Override lambda on the command line: the set shrinks to ~(-0.25, 0.25).
    let status = ioa()
        .args(["reach", "--config"])
        .arg(&cfg)
        .args(["--set", "field_params.lambda=2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let over = centers_1d(&out.join("over.csv"));
    let hi = over.iter().cloned().fold(f64::MIN, f64::max);
    assert!((hi - 0.25).abs() < 0.03, "override not applied: max {hi}");
}

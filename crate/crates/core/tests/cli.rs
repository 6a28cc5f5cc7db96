use std::path::Path;
use std::process::{Command, Output};

use grafs::output::csv_body;

fn grafs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grafs"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("GRAFS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const SYNTH: &[&str] = &[
    "synthesize",
    "--system",
    "two-qubit",
    "--target",
    "cnot",
    "--n",
    "60",
    "--w",
    "0.2",
    "--tau",
    "3",
    "--max-iters",
    "30",
    "--seed",
    "4",
];

#[test]
fn slepian_writes_basis_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = grafs(&["slepian", "--n", "128", "--w", "0.1", "--filter"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("basis.csv"));
    assert!(text.starts_with("# grafs "));
    assert!(text.lines().nth(1).unwrap().starts_with("ell,v0,"));
    assert_eq!(csv_body(&text).lines().count(), 129);
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.path().join("basis.json"))).unwrap();
    assert_eq!(meta["n"], 128);
    assert!(meta["_meta"]["config"].is_string());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = grafs(&["slepian", "--n", "128"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--w"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n = 64\nw = 0.1\nwidth = 3\n").unwrap();
    let out = grafs(&["slepian", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    let out = grafs(&["slepian", "--n", "64", "--w", "0.7"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = grafs(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synthesize_manifest_and_resolved_config_rerun() {
    let a = tempfile::tempdir().unwrap();
    let out = grafs(SYNTH, a.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["pulse.csv", "trace.csv", "coeffs.csv", "coeff_trace.csv", "result.json", "config.resolved"] {
        assert!(a.path().join(f).exists(), "missing {f}");
    }
    let result: serde_json::Value = serde_json::from_str(&read(&a.path().join("result.json"))).unwrap();
    assert!(result["phi"].as_f64().unwrap() > 0.0);
    let pulse = read(&a.path().join("pulse.csv"));
    assert_eq!(csv_body(&pulse).lines().next().unwrap(), "t,omega_1,omega_2,omega_3,omega_4");

    // The emitted configuration alone reproduces the run.
    let b = tempfile::tempdir().unwrap();
    let resolved = a.path().join("config.resolved");
    let out = grafs(&["synthesize", "--config", resolved.to_str().unwrap()], b.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["pulse.csv", "trace.csv", "coeffs.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let sweep = [
        "qsl-sweep",
        "--system",
        "single-axis",
        "--targets",
        "x-pi",
        "--w-grid",
        "0.1,0.2",
        "--f-stars",
        "0.9,0.99",
        "--n",
        "40",
        "--dt-ref",
        "0.5",
        "--alpha-bound",
        "1",
        "--max-iters",
        "60",
        "--seed",
        "9",
    ];
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let a = grafs(&[&sweep[..], &["--workers", "1"]].concat(), one.path());
    let b = grafs(&[&sweep[..], &["--workers", "2"]].concat(), two.path());
    assert_eq!(a.status.code(), b.status.code());
    assert!(matches!(a.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&a.stderr));
    for f in ["sweep.csv", "fig5.csv"] {
        let x = read(&one.path().join(f));
        let y = read(&two.path().join(f));
        assert_eq!(csv_body(&x), csv_body(&y), "{f}");
        // Worker count is not part of the provenance hash either.
        assert_eq!(x, y);
    }
    assert_eq!(read(&one.path().join("progress.jsonl")).lines().count(), 4);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = grafs(
        &[
            "grad-check", "--system", "toffoli", "--target", "toffoli", "--n", "40", "--w", "0.1", "--tau", "2",
            "--samples", "5",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("grad_check.json"))).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["samples"].as_array().unwrap().len(), 10);
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_grafs"))
        .args(["slepian", "--n", "32", "--w", "0.1"])
        .env("GRAFS_OUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("basis.csv").exists());
}

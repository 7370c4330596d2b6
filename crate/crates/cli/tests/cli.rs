//! End-to-end checks of the `dms` binary: spec in, reports out.

use std::path::Path;
use std::process::Command;

fn dms() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dms"))
}

fn write_spec(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn norm_single_coefficient_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "norm.json",
        r#"{
            "kind": "norm",
            "window": {"j_min": -2, "j_max": 3, "extent_log2": 2},
            "space": {"family": "B", "s": 0.0, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "sequence": [{"cube": {"j": 0, "k": [0]}, "re": [1.0], "im": [0.0]}]
        }"#,
    );
    let out = tmp.path().join("out");
    let status = dms()
        .args(["norm", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out);
    let norm = rep["norm"].as_f64().unwrap();
    assert!((norm - 1.0).abs() <= 1e-12, "norm {norm}");
    assert!(out.join("tables.csv").exists());
    assert!(out.join("plot.csv").exists());
}

#[test]
fn norm_reports_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "norm.json",
        r#"{
            "kind": "norm",
            "seed": 42,
            "window": {"j_min": -1, "j_max": 2, "extent_log2": 1},
            "space": {"family": "F", "s": 0.5, "p": 1.5, "q": 2.0, "n": 1, "m": 2},
            "weight": {"kind": "diag_power", "exponents": [0.0, 1.0]},
            "ensemble": {"size": 5, "support": 3}
        }"#,
    );
    let mut blobs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("out{run}"));
        let status = dms()
            .args(["norm", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        blobs.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(blobs[0], blobs[1], "reports differ between identical runs");
}

#[test]
fn adtest_identity_operator_all_ratios_one() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "adtest.json",
        r#"{
            "kind": "adtest",
            "seed": 7,
            "window": {"j_min": -1, "j_max": 2, "extent_log2": 1},
            "space": {"family": "B", "s": 0.0, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "operator": "identity",
            "ensemble": {"size": 6, "support": 3}
        }"#,
    );
    let out = tmp.path().join("out");
    let status = dms()
        .args(["adtest", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out);
    assert!((rep["max_ratio"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
    assert!((rep["median_ratio"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
    // thresholds of the scalar baseline
    let th = &rep["thresholds"];
    assert_eq!(th["j"].as_f64().unwrap(), 1.0);
    assert_eq!(th["d_star"].as_f64().unwrap(), 1.0);
    assert_eq!(th["e_star"].as_f64().unwrap(), 0.5);
}

#[test]
fn trace_identity_weights_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "trace.json",
        r#"{
            "kind": "trace",
            "seed": 11,
            "window": {"j_min": 0, "j_max": 1, "extent_log2": 1},
            "space": {"family": "B", "s": 1.2, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "gamma": 1.0,
            "wavelet": {"k": 2, "levels": 8},
            "ensemble": {"size": 4, "support": 2}
        }"#,
    );
    let out = tmp.path().join("out");
    let output = dms()
        .args(["trace", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let rep = report(&out);
    let compat = rep["compat_certificate"].as_f64().unwrap();
    assert!((compat - 1.0).abs() <= 1e-12, "compat {compat}");
    let rt = rep["round_trip_residual"].as_f64().unwrap();
    assert!(rt <= 1e-6, "round trip {rt}");
}

#[test]
fn trace_warns_below_smoothing_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "trace.json",
        r#"{
            "kind": "trace",
            "seed": 11,
            "window": {"j_min": 0, "j_max": 1, "extent_log2": 1},
            "space": {"family": "B", "s": 0.1, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "gamma": 1.0,
            "wavelet": {"k": 2, "levels": 8, "force": true},
            "ensemble": {"size": 2, "support": 2}
        }"#,
    );
    let out = tmp.path().join("out");
    let status = dms()
        .args(["trace", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "expected the warning exit code");
}

#[test]
fn wavelet_check_and_order_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "wc.json",
        r#"{"kind": "wavelet-check", "wavelet": {"k": 2, "levels": 8}}"#,
    );
    let out = tmp.path().join("out");
    let status = dms()
        .args(["wavelet-check", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out);
    assert!(rep["gram_residual"].as_f64().unwrap() <= 1e-6);
    assert!(rep["filter_residual"].as_f64().unwrap() <= 1e-12);

    // an order below the admissible bound is refused without force
    let spec2 = write_spec(
        tmp.path(),
        "wc2.json",
        r#"{
            "kind": "wavelet-check",
            "wavelet": {"k": 1, "levels": 8},
            "space": {"family": "B", "s": 3.0, "p": 2.0, "q": 2.0, "n": 1, "m": 1}
        }"#,
    );
    let status2 = dms()
        .args(["wavelet-check", "--spec"])
        .arg(&spec2)
        .arg("--out")
        .arg(tmp.path().join("out2"))
        .status()
        .unwrap();
    assert_eq!(status2.code(), Some(1));
}

#[test]
fn validate_flags_inadmissible_growth_class() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "bad.json",
        r#"{
            "kind": "norm",
            "space": {"family": "B", "s": 0.0, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "growth": {"kind": "table", "path": "/nonexistent", "delta1": 0.0, "delta2": 0.5, "omega": 0.9}
        }"#,
    );
    // the table path never loads; validation uses only the declared class
    let spec_ok = write_spec(
        tmp.path(),
        "ok.json",
        r#"{
            "kind": "norm",
            "space": {"family": "B", "s": 0.0, "p": 2.0, "q": 2.0, "n": 1, "m": 1},
            "sequence": [{"cube": {"j": 0, "k": [0]}, "re": [1.0], "im": [0.0]}]
        }"#,
    );
    let out = dms().args(["validate", "--spec"]).arg(&spec).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("admissible range"),
        "diagnostics missing: {text}"
    );
    let out_ok = dms()
        .args(["validate", "--spec"])
        .arg(&spec_ok)
        .output()
        .unwrap();
    let text_ok = String::from_utf8_lossy(&out_ok.stdout);
    assert!(text_ok.contains("no diagnostics"), "{text_ok}");
}

#[test]
fn window_override() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "norm.json",
        r#"{
            "kind": "norm",
            "space": {"family": "B", "s": 0.0, "p": 1.0, "q": 1.0, "n": 1, "m": 1},
            "sequence": [
                {"cube": {"j": 0, "k": [0]}, "re": [1.0], "im": [0.0]},
                {"cube": {"j": 1, "k": [0]}, "re": [1.0], "im": [0.0]}
            ]
        }"#,
    );
    let out = tmp.path().join("out");
    let status = dms()
        .args(["norm", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .args(["--window", "-1:2:1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out);
    let norm = rep["norm"].as_f64().unwrap();
    let expect = 1.0 + 2.0f64.powf(-0.5);
    assert!((norm - expect).abs() <= 1e-12, "{norm} vs {expect}");
}

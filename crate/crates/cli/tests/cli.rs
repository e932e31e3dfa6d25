use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn pwtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwtl"))
        .args(args)
        .env("PWTL_JOBS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pwtl(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ring_simulation_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("metrics.json");
    let heat = dir.path().join("heat.csv");
    ok(&[
        "simulate",
        "--network",
        s(&fixture("ring.json")),
        "--init",
        s(&fixture("ring_init.csv")),
        "--probe",
        "0,120",
        "--heatmap",
        s(&heat),
        "--out",
        s(&out),
    ]);
    let m = json(&out);
    assert_eq!(m["steps"], 680);
    assert_eq!(m["samples"], 480);
    assert!(m["avg_speed_mps"].as_f64().unwrap() > 0.0);
    let rows = std::fs::read_to_string(&heat).unwrap().lines().count();
    assert!(rows > 1);
}

#[test]
fn cfl_violation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("metrics.json");
    let res = pwtl(&[
        "simulate",
        "--network",
        s(&fixture("ring.json")),
        "--dt",
        "1.0",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("CFL"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"nodes\": [").unwrap();
    let res = pwtl(&[
        "simulate",
        "--network",
        s(&broken),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!pwtl(&["optimize", "--network", "x"]).status.success());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let net = fixture("two_intersections.json");
    let init = fixture("two_intersections_init.csv");

    ok(&[
        "calibrate-fd",
        "--counters",
        s(&fixture("counters.csv")),
        "--out",
        s(&p("fd.json")),
    ]);
    let fd = json(&p("fd.json"));
    assert!(fd.to_string().contains("rho_cr"), "{fd}");
    std::fs::write(
        p("lights.json"),
        r#"{"J1": {"red": 30, "green": 40, "offset": 5}, "J2": {"red": 35, "green": 35, "offset": 0}}"#,
    )
    .unwrap();
    ok(&[
        "simulate",
        "--network",
        s(&net),
        "--init",
        s(&init),
        "--lights",
        s(&p("lights.json")),
        "--fd",
        s(&p("fd.json")),
        "--out",
        s(&p("calibrated.json")),
    ]);
    assert!(json(&p("calibrated.json"))["avg_speed_mps"].as_f64().unwrap() > 0.0);

    ok(&[
        "gen-dataset",
        "--network",
        s(&net),
        "--init",
        s(&init),
        "--runs",
        "100",
        "--seed",
        "5",
        "--out",
        s(&p("runs.csv")),
    ]);
    let csv = std::fs::read_to_string(p("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .ends_with("avg_speed,queue_length,status"));

    ok(&[
        "train-surrogate",
        "--data",
        s(&p("runs.csv")),
        "--model",
        "linear",
        "--out",
        s(&p("model.json")),
    ]);
    assert_eq!(json(&p("model.json"))["model"]["kind"], "linear");

    ok(&[
        "optimize",
        "--network",
        s(&net),
        "--model",
        s(&p("model.json")),
        "--init",
        s(&init),
        "--objective",
        "speed",
        "--data",
        s(&p("runs.csv")),
        "--out",
        s(&p("plan.json")),
    ]);
    let report = json(&p("plan.report.json"));
    assert!(report["predicted_value"].as_f64().unwrap() >= report["seed_value"].as_f64().unwrap());

    ok(&[
        "validate",
        "--network",
        s(&net),
        "--init",
        s(&init),
        "--lights",
        s(&p("plan.json")),
        "--out",
        s(&p("check.json")),
    ]);
    let simulated = report["simulated"]["avg_speed"].as_f64().unwrap();
    let validated = json(&p("check.json"))["avg_speed_mps"].as_f64().unwrap();
    assert_eq!(simulated, validated);
}

//! End-to-end checks of the command-line surface: exit codes, summary
//! shapes, and file artifacts.

use std::process::{Command, Output};

use serde_json::Value;

fn sandpile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sandpile"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn run_ok(args: &[&str]) -> Value {
    let out = sandpile(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn exit_code(args: &[&str]) -> i32 {
    sandpile(args).status.code().expect("process not signalled")
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["stabilize", "--d", "2", "--n", "10", "--nope"],
        vec!["stabilize", "--d", "2"], // neither --n nor --in
        vec!["stabilize", "--d", "4", "--n", "10"],
        vec!["stabilize", "--d", "2", "--n", "10", "--strategy", "magic"],
        vec!["stabilize", "--d", "2", "--n", "10", "--mem-cap-gb", "-1"],
        vec!["green", "--d", "2", "--n", "100", "--tol", "0"],
        vec!["converge", "--d", "2", "--schedule", "4000,1000"],
        vec!["converge", "--d", "2", "--schedule", "1000,4000", "--phi", "bump:0,0"],
        vec!["render", "--in", "x.sfield", "--out", "x.png", "--crop", "1,2,3"],
        vec!["not-a-command"],
    ] {
        let out = sandpile(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?} should be a usage error");
        assert!(!out.stderr.is_empty(), "{args:?} should explain itself on stderr");
    }
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.sfield").display().to_string();
    assert_eq!(exit_code(&["stabilize", "--d", "2", "--in", &missing]), 1);

    let png = dir.path().join("p.png").display().to_string();
    assert_eq!(exit_code(&["render", "--in", &missing, "--out", &png]), 1);

    // A crop that parses but reaches outside the grid fails at run time.
    let dump = dir.path().join("s.sfield").display().to_string();
    run_ok(&["stabilize", "--d", "2", "--n", "40", "--out", &dump]);
    assert_eq!(
        exit_code(&["render", "--in", &dump, "--out", &png, "--crop", "-900,-900,900,900"]),
        1
    );
}

#[test]
fn stabilize_summary_is_stable_once_timing_is_masked() {
    let args = ["stabilize", "--d", "2", "--n", "2000", "--strategy", "sweep"];
    let mut a = run_ok(&args);
    let mut b = run_ok(&args);
    for doc in [&mut a, &mut b] {
        let obj = doc.as_object_mut().unwrap();
        assert!(obj.remove("wall_time_ms").unwrap().is_u64());
    }
    assert_eq!(a, b, "summaries must agree apart from wall time");
    assert_eq!(a["config"]["subcommand"], "stabilize");
    assert_eq!(a["config"]["strategy"], "sweep");
    assert_eq!(a["d"], 2);
    assert_eq!(a["chips"], 2000);
    assert!(a["total_topples"].as_u64().unwrap() > 0);
    assert!(a["measured_radius"].as_f64().unwrap() > 0.0);
}

#[test]
fn stabilizing_a_stable_dump_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("s.sfield").display().to_string();
    let first = run_ok(&["stabilize", "--d", "2", "--n", "500", "--out", &dump]);
    assert!(first["total_topples"].as_u64().unwrap() > 0);

    let again = run_ok(&["stabilize", "--d", "2", "--in", &dump]);
    assert_eq!(again["chips"], 500);
    assert_eq!(again["total_topples"], 0);
    assert_eq!(again["measured_radius"], first["measured_radius"]);
}

#[test]
fn green_summary_reports_a_certified_residual() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("g.sfield").display().to_string();
    let doc = run_ok(&[
        "green", "--d", "2", "--n", "169", "--radius", "0.8", "--out", &dump,
    ]);
    assert_eq!(doc["n"], 169);
    assert_eq!(doc["h"].as_f64().unwrap(), 1.0 / 13.0);
    assert!(doc["residual"].as_f64().unwrap() <= 1e-10);
    assert!(doc["iterations"].as_u64().unwrap() >= 1);
    assert!(doc["unknowns"].as_u64().unwrap() > 100);

    let field = sandpile::sfield::read_path(std::path::Path::new(&dump))
        .unwrap()
        .into_real()
        .unwrap();
    assert_eq!(field.h(), 1.0 / 13.0);
}

#[test]
fn render_writes_a_png_with_the_requested_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("s.sfield").display().to_string();
    let png = dir.path().join("s.png").display().to_string();
    run_ok(&["stabilize", "--d", "2", "--n", "1000", "--out", &dump]);
    let doc = run_ok(&["render", "--in", &dump, "--out", &png, "--crop", "-15,-15,15,15"]);
    assert_eq!(doc["width"], 31);
    assert_eq!(doc["height"], 31);
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(doc["png_bytes"].as_u64().unwrap() as usize, bytes.len());
}

#[test]
fn converge_writes_the_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json").display().to_string();
    // With --out the report goes to the file instead of stdout.
    let out = sandpile(&["converge", "--d", "2", "--schedule", "100,400", "--out", &path]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let doc: Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).expect("report file is JSON");
    assert_eq!(doc["config"]["schedule"], serde_json::json!([100, 400]));
    assert_eq!(doc["config"]["phi"], serde_json::json!(["bump:0,0:0.3"]));
    let rows = doc["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["mass"], 1.0);
    }
}

#[test]
fn verify_echoes_the_seed_and_passes() {
    let doc = run_ok(&["verify", "--seed", "11"]);
    assert_eq!(doc["report"]["seed"], 11);
    assert_eq!(doc["report"]["all_passed"], true);
    assert_eq!(doc["report"]["suites"].as_array().unwrap().len(), 8);
}

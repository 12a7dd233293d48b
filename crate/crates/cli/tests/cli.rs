use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn saturate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saturate"))
        .args(args)
        .env_remove("SATURATE_NUM_BACKEND")
        .output()
        .expect("binary runs")
}

fn record(args: &[&str]) -> Value {
    let out = saturate(args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn system_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("systems").join(name).display().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(saturate(&["--help"]).status.code(), Some(0));
    assert_eq!(saturate(&["--version"]).status.code(), Some(0));
    assert_eq!(saturate(&["threshold", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["threshold", "--dv", "x"],
        &["threshold", "--dv", "3,4"],
        &["threshold", "--dv", "1"],
        &["threshold", "--tol", "2"],
        &["threshold", "--eps", "1.5"],
        &["verify", "--suite", "nope"],
        &["potential", "--shape", "triangular"],
        &["potential", "--system", "/nonexistent/system.json"],
    ] {
        let out = saturate(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn record_schema() {
    let r = record(&["threshold", "--dv", "3", "--dc", "6", "--m", "1"]);
    assert_eq!(r["schemaVersion"], 1);
    assert_eq!(r["tool"], "saturate");
    assert_eq!(r["toolVersion"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["config"]["command"], "threshold");
    assert_eq!(r["config"]["backend"], "f64");
    assert!(r["timing"]["seconds"].as_f64().unwrap() >= 0.0);
    let eps = r["result"]["eps_bp"].as_f64().unwrap();
    assert!((eps - 0.4294).abs() < 1e-3, "{eps}");
}

#[test]
fn single_de_run() {
    let below = record(&["threshold", "--eps", "0.40"]);
    let above = record(&["threshold", "--eps", "0.45"]);
    assert_ne!(below["result"], above["result"]);
    assert_eq!(record(&["threshold", "--eps", "0.40"])["result"], below["result"]);
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"dc": 8, "m": 2, "tol": 0.001}"#).unwrap();
    let p = path.to_str().unwrap();
    let r = record(&["threshold", "--config", p, "--dc", "6"]);
    assert_eq!(r["config"]["dc"], serde_json::json!([6]));
    assert_eq!(r["config"]["m"], serde_json::json!([2]));
    assert_eq!(r["config"]["tol"], 0.001);
    assert_eq!(r["config"]["dv"], serde_json::json!([3]));

    std::fs::write(&path, r#"{"dcc": 8}"#).unwrap();
    assert_eq!(saturate(&["threshold", "--config", p]).status.code(), Some(1));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let out = saturate(&["potential", "--dv", "3", "--dc", "4", "--m", "2", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let from_file: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let direct = record(&["potential", "--dv", "3", "--dc", "4", "--m", "2"]);
    assert_eq!(from_file["result"], direct["result"]);
}

#[test]
fn potential_nonbinary() {
    let r = record(&["potential", "--dv", "3", "--dc", "4", "--m", "2"]);
    let res = &r["result"];
    assert_eq!(res["verdict"], "solved");
    assert_eq!(res["solution"]["D"], serde_json::json!([["1", "2"], ["2", "1"]]));
    assert_eq!(res["counts"], serde_json::json!({"sizeF": 4, "sizeG": 12, "nPhi": 6, "nMu": 18}));
}

#[test]
fn potential_diagonal_is_structured_infeasible() {
    let r = record(&["potential", "--dv", "3", "--dc", "4", "--m", "2", "--shape", "diagonal"]);
    assert_eq!(r["result"]["verdict"], "infeasible");
    assert!(r["result"].get("solution").is_none());

    let c = record(&["potential", "--dv", "3", "--dc", "4", "--m", "2", "--shape", "diagonal", "--check-only"]);
    assert_eq!(c["result"]["verdict"], "fails");
    assert_eq!(c["result"]["necessaryCondition"]["witness"]["side"], "F");
    assert!(c["result"].get("counts").is_none());
}

#[test]
fn potential_system_files() {
    let r = record(&["potential", "--system", &system_file("bilayer.json")]);
    assert_eq!(r["result"]["solution"]["D"], serde_json::json!([["3", "0"], ["0", "3"]]));
    assert_eq!(r["result"]["solution"]["F"], "eps*x1^3*x2^3");

    let g = record(&["potential", "--system", &system_file("generic-bilayer.json")]);
    assert_eq!(g["result"]["solution"]["D"], serde_json::json!([["2", "0"], ["0", "3"]]));
    assert_eq!(g["result"]["solution"]["F"], "eps*x1^2*x2^3");

    let p = record(&["potential", "--system", &system_file("bilayer.json"), "--shape", "positive"]);
    assert_eq!(p["result"]["verdict"], "not-admissible");
}

#[test]
fn verify_exit_codes() {
    let ok = saturate(&["verify", "--suite", "monotonicity,simplex", "--samples", "50"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("monotonicity") && text.contains("all suites passed"), "{text}");

    let r = record(&["verify", "--suite", "small-example", "--format", "json"]);
    assert_eq!(r["result"]["passed"], true);
    assert!(r["timing"]["suites"]["small-example"].is_number());

    // the reference dv = 2 counting formula disagrees with enumeration
    let bad = saturate(&["verify", "--suite", "counting"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}

#[test]
fn verify_results_are_deterministic() {
    let args = ["verify", "--suite", "monotonicity,gradient", "--samples", "40", "--seed", "7", "--format", "json"];
    assert_eq!(record(&args)["result"], record(&args)["result"]);
}

#[test]
fn sweep_csv() {
    let out = saturate(&["threshold", "--dv", "3", "--dc", "6,8", "--m", "1,2", "--sweep", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    assert_eq!(rdr.headers().unwrap(), vec!["dv", "dc", "m", "L", "w", "eps_bp"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (&r[1], &r[2])).collect();
    assert_eq!(keys, [("6", "1"), ("6", "2"), ("8", "1"), ("8", "2")]);
    let first: f64 = rows[0][5].parse().unwrap();
    assert!((first - 0.4294).abs() < 1e-3);

    let json = record(&["threshold", "--dc", "6,8", "--sweep", "--format", "json"]);
    assert_eq!(json["result"].as_array().unwrap().len(), 2);
}

#[test]
fn saturate_reports_curve() {
    let r = record(&["saturate", "--L", "40", "--points", "4", "--grid", "5"]);
    let res = &r["result"];
    let bp = res["epsBP"].as_f64().unwrap();
    let star = res["epsStar"].as_f64().unwrap();
    assert!(bp < star && star < 0.49, "{bp} {star}");
    assert_eq!(res["energyGapCurve"].as_array().unwrap().len(), 4);
    assert_eq!(res["coupled"][0]["L"], 40);
    assert!(res["wBound"]["wMin"].as_f64().unwrap() > 0.0);

    let out = saturate(&["saturate", "--L", "40", "--points", "3", "--grid", "3", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("eps,delta_e\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn potential_has_no_csv() {
    assert_eq!(saturate(&["potential", "--format", "csv"]).status.code(), Some(1));
}

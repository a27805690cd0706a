//! Black-box tests of the `hsc` binary: exit codes, output formats, and
//! run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hsc");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write(dir: &TempDir, name: &str, content: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

const FIVE_NODE: &str = "r\ta\nr\tb\na\ta1\na\ta2\n";
const FIVE_NODE_SCORES: &str = "sample_id,label,a1,a2,b\ns0,b,0.4,0.35,0.25\n";

#[test]
fn validate_reports_counts() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", FIVE_NODE);
    let out = run(&["validate", "--hierarchy", &h]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "nodes=5 leaves=3");
}

#[test]
fn validate_rejects_cycle_with_domain_code() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", "a\tb\nb\tc\nc\ta\na\tleaf1\nb\tleaf2\n");
    let out = run(&["validate", "--hierarchy", &h]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("CycleDetected"), "{}", stderr(&out));
}

#[test]
fn validate_rejects_empty_file() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", "# only a comment\n");
    let out = run(&["validate", "--hierarchy", &h]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("EmptyHierarchy"), "{}", stderr(&out));
}

#[test]
fn missing_file_is_io_error() {
    let out = run(&["validate", "--hierarchy", "/nonexistent/h.tsv"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["eval", "--bogus-flag"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn eval_emits_report_json() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", FIVE_NODE);
    let s = write(&dir, "s.csv", FIVE_NODE_SCORES);
    let curve_path = dir.path().join("curve.csv");
    let out = run(&[
        "eval",
        "--hierarchy",
        &h,
        "--scores",
        &s,
        "--rule",
        "climbing",
        "--curve-out",
        curve_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((report["haurc"].as_f64().unwrap() - 0.8155).abs() < 1e-4);
    assert_eq!(report["rule"], "climbing");
    assert_eq!(report["n_samples"], 1);
    let curve = fs::read_to_string(curve_path).unwrap();
    assert!(curve.starts_with("threshold,coverage,value"));
    assert_eq!(curve.trim_end().lines().count(), 4); // header + 3 points
}

#[test]
fn eval_on_flat_hierarchy_has_zero_gain() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", "root\tx\nroot\ty\nroot\tz\n");
    let s = write(
        &dir,
        "s.csv",
        "sample_id,label,x,y,z\n\
         s0,x,0.7,0.2,0.1\ns1,y,0.5,0.3,0.2\ns2,z,0.1,0.2,0.7\ns3,x,0.3,0.4,0.3\n",
    );
    let out = run(&[
        "eval",
        "--hierarchy",
        &h,
        "--scores",
        &s,
        "--rule",
        "climbing",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["hierarchical_gain_percent"].as_f64().unwrap(), 0.0);
}

#[test]
fn curve_subcommand_emits_both_kinds() {
    let dir = TempDir::new().unwrap();
    let h = write(&dir, "h.tsv", FIVE_NODE);
    let s = write(&dir, "s.csv", FIVE_NODE_SCORES);
    for kind in ["risk", "ece"] {
        let out = run(&[
            "curve",
            "--hierarchy",
            &h,
            "--scores",
            &s,
            "--curve-kind",
            kind,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).starts_with("threshold,coverage,value"));
    }
    let out = run(&[
        "curve",
        "--hierarchy",
        &h,
        "--scores",
        &s,
        "--curve-kind",
        "nonsense",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn calibrate_solve_mode() {
    // closed-form oracle: Beta(3,2) band mass on [0.4, 0.8] is 0.64
    let out = run(&[
        "calibrate",
        "--alpha",
        "0.4",
        "--epsilon",
        "0.2",
        "--n",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((doc["delta"].as_f64().unwrap() - 0.36).abs() < 1e-9);

    let out = run(&[
        "calibrate",
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
        "--epsilon",
        "0.01",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(doc["n"].as_u64().unwrap() > 100);

    // over- and under-determined parameter sets are usage errors
    let out = run(&[
        "calibrate",
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
        "--epsilon",
        "0.01",
        "--n",
        "500",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("OverdeterminedParameters"));
    let out = run(&["calibrate", "--alpha", "0.1", "--delta", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("UnderdeterminedParameters"));
    // solving for alpha is not supported
    let out = run(&[
        "calibrate",
        "--delta",
        "0.1",
        "--epsilon",
        "0.01",
        "--n",
        "500",
    ]);
    assert_eq!(code(&out), 1);
}

fn synth_files(dir: &TempDir, seed: &str) -> (String, String) {
    let out_dir = dir.path().join(format!("sim{seed}"));
    let out = run(&[
        "simulate",
        "--seed",
        seed,
        "--n-leaves",
        "20",
        "--n-samples",
        "200",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (
        out_dir.join("hierarchy.tsv").to_string_lossy().into_owned(),
        out_dir.join("scores.csv").to_string_lossy().into_owned(),
    )
}

#[test]
fn calibrate_produces_certificate_and_evaluation() {
    let dir = TempDir::new().unwrap();
    let (h, s) = synth_files(&dir, "11");
    let (_, s_test) = synth_files(&dir, "12");
    let out = run(&[
        "calibrate",
        "--hierarchy",
        &h,
        "--scores",
        &s,
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
        "--eval-on",
        &s_test,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let theta = doc["theta_hat"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&theta));
    assert_eq!(doc["n"], 200);
    assert_eq!(doc["rule"], "climbing");
    assert!(doc["epsilon"].as_f64().unwrap() > 0.0);
    let acc = doc["evaluation"]["accuracy"].as_f64().unwrap();
    // 200 calibration samples give a loose epsilon; just sanity-check range
    assert!((0.5..=1.0).contains(&acc));

    // certificate JSON round-trips through the same float formatting
    let out2 = run(&[
        "calibrate",
        "--hierarchy",
        &h,
        "--scores",
        &s,
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
    ]);
    let doc2: serde_json::Value = serde_json::from_str(&stdout(&out2)).unwrap();
    assert_eq!(doc2["theta_hat"].as_f64().unwrap(), theta);
}

#[test]
fn simulate_is_deterministic_and_validates() {
    let dir = TempDir::new().unwrap();
    let (h1, s1) = synth_files(&dir, "7");
    let dir2 = TempDir::new().unwrap();
    let (h2, s2) = synth_files(&dir2, "7");
    assert_eq!(fs::read(&h1).unwrap(), fs::read(&h2).unwrap());
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());

    // generated files feed straight back into eval, byte-identically
    let eval = |h: &str, s: &str| {
        let out = run(&["eval", "--hierarchy", h, "--scores", s]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        stdout(&out)
    };
    assert_eq!(eval(&h1, &s1), eval(&h2, &s2));

    let out = run(&[
        "simulate",
        "--seed",
        "0",
        "--n-leaves",
        "1",
        "--out-dir",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("FewerThanTwoLeaves"));
    assert!(!Path::new(&dir.path().join("bad/hierarchy.tsv")).exists());
}

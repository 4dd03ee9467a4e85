use std::path::Path;
use std::process::{Command, Output};

use divkit::grid::{Grid, GridDensity};

fn divkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(dir: &Path, name: &str, d: &GridDensity) -> String {
    let p = dir.join(name);
    d.write_csv(&p).unwrap();
    p.to_string_lossy().into_owned()
}

fn gen_file(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn bumps(grid: Grid, mean: f64) -> GridDensity {
    GridDensity::from_fn(grid, |x| (-0.5 * (x - mean).powi(2)).exp()).unwrap()
}

#[test]
fn compute_bregman_with_dpd_generator_matches_dpd() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(0.0, 10.0, 2001).unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(grid, 4.5));
    let g = fixture(dir.path(), "g.csv", &bumps(grid, 5.5));
    let gen = gen_file(dir.path(), "dpd.json", r#"{"kind":"dpd","params":{"alpha":0.5}}"#);

    let value = |o: &Output| -> f64 {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
        serde_json::from_str::<serde_json::Value>(&stdout(o)).unwrap()["value"]
            .as_f64()
            .unwrap()
    };
    let a = value(&divkit(&["compute", "--div", "bregman", "--gen", &gen, "--f", &f, "--g", &g]));
    let b = value(&divkit(&["compute", "--div", "dpd", "--alpha", "0.5", "--f", &f, "--g", &g]));
    assert!(a > 0.0);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn compute_report_carries_schema_and_terms() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(0.0, 10.0, 501).unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(grid, 5.0));
    let o = divkit(&["compute", "--div", "dpd", "--alpha", "1", "--f", &f, "--g", &f]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "divkit/1");
    assert_eq!(v["divergence"], "dpd");
    assert_eq!(v["terms"].as_array().unwrap().len(), 3);
}

#[test]
fn csv_output_lists_value_then_terms() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(0.0, 10.0, 501).unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(grid, 4.0));
    let g = fixture(dir.path(), "g.csv", &bumps(grid, 6.0));
    let out = dir.path().join("r.csv");
    let o = divkit(&[
        "compute", "--div", "ldpd", "--alpha", "0.5", "--f", &f, "--g", &g,
        "--format", "csv", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    let body = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "quantity,value");
    assert!(lines[1].starts_with("ldpd,"));
    assert_eq!(lines.len(), 5);
}

#[test]
fn mismatched_grids_are_resampled_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(Grid::new(0.0, 10.0, 2001).unwrap(), 5.0));
    let g = fixture(dir.path(), "g.csv", &bumps(Grid::new(0.0, 10.0, 1001).unwrap(), 5.0));
    let o = divkit(&["compute", "--div", "kl", "--f", &f, "--g", &g]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("resampled g"), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-6);

    let o = divkit(&["compute", "--div", "kl", "--f", &f, "--g", &g, "--grid", "0,10,4001"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("resampled f"));
}

#[test]
fn missing_required_flag_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(Grid::new(0.0, 10.0, 101).unwrap(), 5.0));
    let o = divkit(&["compute", "--div", "dpd", "--f", &f, "--g", &f]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--alpha"));
    let o = divkit(&["compute", "--div", "bregman", "--f", &f, "--g", &f]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(divkit(&["diagnose", "--idx", "1,2,1"]).status.code(), Some(2));
}

#[test]
fn non_standardizable_generator_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let gen = gen_file(dir.path(), "g.json", r#"{"kind":"powr"}"#);
    let o = divkit(&["diagnose", "--gen", &gen, "--idx", "1,2,1"]);
    assert_eq!(o.status.code(), Some(2));
    let gen = gen_file(dir.path(), "g.json", "not json");
    assert_eq!(divkit(&["search", "--gen", &gen, "--idx", "1,2,1"]).status.code(), Some(2));
}

#[test]
fn diagnose_csv_has_one_row_per_theta() {
    let dir = tempfile::tempdir().unwrap();
    let gen = gen_file(dir.path(), "p.json", r#"{"kind":"power","params":{"K":2,"alpha":0.5}}"#);
    let o = divkit(&["diagnose", "--gen", &gen, "--idx", "1,3,2", "--theta-range", "0.01,100,25", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let body = stdout(&o);
    assert_eq!(body.lines().count(), 26);
    assert!(body.starts_with("theta,ratio,defect,identity_defect\n"));
}

#[test]
fn diagnose_reports_worst_defect_for_cosh() {
    let dir = tempfile::tempdir().unwrap();
    let gen = gen_file(dir.path(), "c.json", r#"{"kind":"cosh"}"#);
    let o = divkit(&["diagnose", "--gen", &gen, "--idx", "1,2,1"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"]["verdict"], "refuted");
    assert!(v["verdict"]["defect"].as_f64().unwrap().abs() > 1e-8);
}

#[test]
fn search_stdout_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gen = gen_file(dir.path(), "e.json", r#"{"kind":"exp"}"#);
    let args = ["search", "--gen", &gen, "--idx", "2,3,1", "--seed", "11"];
    let a = divkit(&args);
    let b = divkit(&args);
    assert_eq!(a.status.code(), Some(1));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["outcome"]["kind"], "zero-without-equality");
    assert!(v.get("density_files").is_none());
}

#[test]
fn limit_check_converges_for_overlapping_gaussians() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(0.0, 10.0, 4001).unwrap();
    let f = fixture(dir.path(), "f.csv", &bumps(grid, 5.0));
    let g = fixture(dir.path(), "g.csv", &bumps(grid, 5.5));
    let o = divkit(&["limit-check", "--f", &f, "--g", &g]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["converged"], true);
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn all_zero_density_file_is_a_numeric_degeneracy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.csv");
    std::fs::write(&p, "x,value\n0,0\n0.5,0\n1,0\n").unwrap();
    let p = p.to_string_lossy().into_owned();
    let o = divkit(&["compute", "--div", "kl", "--f", &p, "--g", &p]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

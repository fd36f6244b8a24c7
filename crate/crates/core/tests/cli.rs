use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cav-platoon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_trajectory_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["simulate", "--config", "fig4_nominal", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["collision"], serde_json::Value::Bool(true));
    for key in ["I", "I_bar", "min_h", "min_gap"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header = traj.lines().next().unwrap();
    assert!(header.starts_with("t,v_d,s_H,v_H,s_1,s_2,s_3,s_4,v_1"));
    assert!(header.ends_with("h_p,sigma_1,sigma_2,sigma_3,sigma_4"));
    assert_eq!(traj.lines().count(), 5002);
    let echoed = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    // omitted fields are filled in
    assert!(echoed.contains("alpha_head"));
    assert!(echoed.contains("tau_head"));
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "mode = \"nominal\"\n[gains]\nalpha_head = \"fast\"\n").unwrap();
    let out = dir.path().join("never");
    let o = cli(&["simulate", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gains.alpha_head"));
    assert!(!out.exists());
}

#[test]
fn unknown_field_and_bad_hv_index_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (body, needle) in [
        ("[gains]\nalpha_hed = 1.0\n", "alpha_hed"),
        ("[gains.beta_head_hv]\n9 = 0.1\n", "beta_head_hv"),
    ] {
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, body).unwrap();
        let o = cli(&["simulate", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{body}");
    }
}

#[test]
fn two_by_two_chart_has_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("chart.toml");
    fs::write(
        &cfg,
        "[chart]\nkind = \"stability\"\nx_axis = { start = 0.0, end = 1.0, points = 2 }\n\
         y_axis = { start = 0.0, end = 1.0, points = 2 }\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = cli(&["chart", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("stability_chart.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn safety_chart_kind_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cli(&["chart", "--config", "fig3d", "--kind", "safety", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("safety_chart.csv").exists());
}

#[test]
fn validate_lists_named_checks_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["validate", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 4);
    assert!(!stdout.contains("FAIL"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("validation.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() >= 4);
}

#[test]
fn missing_config_is_a_config_error() {
    let o = cli(&["sweep", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

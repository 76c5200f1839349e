//! End-to-end tests of the `hybrid-sens` binary: exit codes, file outputs,
//! and the scenario round trip.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-sens"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn dump_defaults_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["bouncing_ball", "five_bar", "pendulum"] {
        let path = dir.path().join(format!("{model}.scn"));
        let out = run_in(
            dir.path(),
            &["dump-defaults", "--model", model, "-o", path.to_str().unwrap()],
        );
        assert!(out.status.success());
        let text = std::fs::read_to_string(&path).unwrap();
        // re-parse and re-serialize: identical configuration
        let v1: serde_json::Value = serde_json::from_str(&text).unwrap();
        let out2 = run_in(dir.path(), &["dump-defaults", "--model", model]);
        let v2: serde_json::Value = serde_json::from_str(&stdout(&out2)).unwrap();
        assert_eq!(v1, v2);
    }
}

#[test]
fn missing_scenario_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "no_such_file.scn"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn ball_run_writes_outputs_with_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("ball.scn");
    assert!(run_in(
        dir.path(),
        &["dump-defaults", "--model", "bouncing_ball", "-o", scn.to_str().unwrap()],
    )
    .status
    .success());

    let out = run_in(
        dir.path(),
        &["run", scn.to_str().unwrap(), "--tf", "1.0", "--output-dir", "out"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // events.csv carries the impact near the closed-form time
    let events = std::fs::read_to_string(dir.path().join("out/events.csv")).unwrap();
    let mut lines = events.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 1 + 1 + 1); // t, index, dtdrho, v_pre, v_post
    let row = lines.next().expect("one event row");
    let t_eve: f64 = row.split(',').next().unwrap().parse().unwrap();
    assert!((t_eve - 0.451523641).abs() < 1e-6, "t_eve = {t_eve}");

    // trajectory.csv column count: 2 + n + n + 1 + np + np + p with n = p = 1
    let traj = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let mut counts = traj.lines().map(|l| l.split(',').count());
    let expected = 2 + 1 + 1 + 1 + 1 + 1 + 1;
    assert!(counts.all(|c| c == expected), "constant column count {expected}");

    // full-precision values round-trip through the file
    let first_data = traj.lines().nth(1).unwrap();
    let q0: f64 = first_data.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(q0, 1.0);
}

#[test]
fn five_bar_run_with_multipliers_has_extra_columns() {
    let dir = tempfile::tempdir().unwrap();
    let scn_path = dir.path().join("fb.scn");
    let out = run_in(dir.path(), &["dump-defaults", "--model", "five_bar"]);
    let mut v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    v["outputs"]["multipliers"] = serde_json::json!(true);
    v["run"]["tf"] = serde_json::json!(0.5);
    v["integrator"]["dense_sample_dt"] = serde_json::json!(0.05);
    std::fs::write(&scn_path, v.to_string()).unwrap();

    let out = run_in(
        dir.path(),
        &["run", scn_path.to_str().unwrap(), "--output-dir", "out"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    // 2 + 6 + 6 + 1 + 12 + 12 + 2 + 4 multiplier columns
    let expected = 2 + 6 + 6 + 1 + 12 + 12 + 2 + 4;
    let mut counts = traj.lines().map(|l| l.split(',').count());
    assert!(counts.all(|c| c == expected));
}

#[test]
fn unknown_scenario_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["dump-defaults", "--model", "bouncing_ball"]);
    let mut v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    v["integrator"]["rtool"] = serde_json::json!(1e-8);
    let scn = dir.path().join("bad.scn");
    std::fs::write(&scn, v.to_string()).unwrap();
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn complex_compare_passes_on_the_smooth_ball_span() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("ball.scn");
    assert!(run_in(
        dir.path(),
        &["dump-defaults", "--model", "bouncing_ball", "-o", scn.to_str().unwrap()],
    )
    .status
    .success());
    let out = run_in(
        dir.path(),
        &[
            "compare",
            scn.to_str().unwrap(),
            "--method",
            "complex",
            "--tf",
            "0.4",
            "--output-dir",
            "out",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("out/compare_report.txt")).unwrap();
    assert!(report.trim_end().ends_with(&format!(
        "RESULT pass max_rel_err={}",
        report.split("max_rel_err=").last().unwrap().trim()
    )));
    assert!(report.contains("RESULT pass"));
}

#[test]
fn complex_compare_rejects_spans_containing_events() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("ball.scn");
    run_in(
        dir.path(),
        &["dump-defaults", "--model", "bouncing_ball", "-o", scn.to_str().unwrap()],
    );
    let out = run_in(
        dir.path(),
        &["compare", scn.to_str().unwrap(), "--method", "complex", "--tf", "1.0"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smooth span"));
}

#[test]
fn fd_compare_on_the_five_bar_passes_and_strict_threshold_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("fb.scn");
    let out = run_in(dir.path(), &["dump-defaults", "--model", "five_bar"]);
    let mut v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // shortened span covering the first bounce keeps the test quick
    v["run"]["tf"] = serde_json::json!(1.0);
    std::fs::write(&scn, v.to_string()).unwrap();

    let out = run_in(
        dir.path(),
        &["compare", scn.to_str().unwrap(), "--method", "fd", "--output-dir", "out"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("RESULT pass"));

    // an unreachable threshold trips the FD truncation floor
    let out = run_in(
        dir.path(),
        &[
            "compare",
            scn.to_str().unwrap(),
            "--method",
            "fd",
            "--threshold",
            "1e-9",
            "--output-dir",
            "out2",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("RESULT fail"));
}

#[test]
fn validate_passes_built_ins_and_rejects_infeasible_geometry() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["bouncing_ball", "five_bar", "pendulum"] {
        let scn = dir.path().join(format!("{model}.scn"));
        run_in(
            dir.path(),
            &["dump-defaults", "--model", model, "-o", scn.to_str().unwrap()],
        );
        let out = run_in(dir.path(), &["validate", scn.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{model}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(stdout(&out).contains("validation passed"));
    }

    // an initial configuration violating the bar constraints must fail,
    // reporting the residual
    let out = run_in(dir.path(), &["dump-defaults", "--model", "five_bar"]);
    let mut v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    v["model"]["five_bar"]["initial_q"] = serde_json::json!([-1.5, -1.0, 0.3, -2.0, 1.5, -1.0]);
    let scn = dir.path().join("broken.scn");
    std::fs::write(&scn, v.to_string()).unwrap();
    let out = run_in(dir.path(), &["validate", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));
}

#[test]
fn param_override_changes_the_runtime_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("ball.scn");
    run_in(
        dir.path(),
        &["dump-defaults", "--model", "bouncing_ball", "-o", scn.to_str().unwrap()],
    );
    // doubling the drop height scales the impact time by sqrt(2)
    let out = run_in(
        dir.path(),
        &[
            "run",
            scn.to_str().unwrap(),
            "--param-override",
            "h0=2.0",
            "--output-dir",
            "out",
        ],
    );
    assert!(out.status.success());
    let events = std::fs::read_to_string(dir.path().join("out/events.csv")).unwrap();
    let t_eve: f64 = events
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let expected = (2.0f64 * 2.0 / 9.81).sqrt();
    assert!((t_eve - expected).abs() < 1e-6);

    let out = run_in(
        dir.path(),
        &["run", scn.to_str().unwrap(), "--param-override", "bogus=1"],
    );
    assert_eq!(out.status.code(), Some(1));
}

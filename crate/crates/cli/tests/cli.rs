use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon-rhc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_preset_writes_tables_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "fig3-no-pv", "--out", "o", "--set", "duration=3"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    for f in ["trajectory.csv", "estimates.csv", "meta.json"] {
        assert!(o.join(f).exists(), "{f} missing");
    }
    let meta = read_json(&o.join("meta.json"));
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["steps"], 30);
    assert_eq!(meta["scenario"]["duration"], 3.0);
    let traj = std::fs::read_to_string(o.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 30 * 5);
}

#[test]
fn zero_duration_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--set", "duration=0", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1);
    assert!(traj.starts_with("step,t,id,kind,"));
}

#[test]
fn missing_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(&["run", "missing.toml"], dir.path())), 3);
    assert_eq!(code(&cli(&["run", "--preset", "fig9"], dir.path())), 3);
    assert_eq!(code(&cli(&["run", "--set", "bogus=1"], dir.path())), 3);
    assert_eq!(code(&cli(&["run", "--set", "duration=-1"], dir.path())), 3);
}

#[test]
fn unknown_keys_in_file_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "n_vehicles = 3\nhorizon = 20\n").unwrap();
    let out = cli(&["run", "bad.toml"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn collision_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "--out",
            "o",
            "--set",
            "n_vehicles=2",
            "--set",
            "duration=5",
            "--set",
            "initial.cav_speed=0.0",
            "--set",
            "initial.hdv_speeds=[35.0]",
            "--set",
            "initial.headways=[5.0]",
            "--set",
            "hdv.perturbation=0.0",
            "--set",
            "hdv.rho=0.05",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("o/collision.json"));
    assert_eq!(report["follow_id"], 2);
}

#[test]
fn preset_dump_runs_as_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["presets"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
    let out = cli(&["presets", "fig4-with-pv"], dir.path());
    assert_eq!(code(&out), 0);
    std::fs::write(dir.path().join("fig4.toml"), &out.stdout).unwrap();
    let out = cli(&["run", "fig4.toml", "--set", "duration=2", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let meta = read_json(&dir.path().join("o/meta.json"));
    assert_eq!(meta["scenario"]["name"], "fig4-with-pv");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for o in ["a", "b"] {
        let out = cli(&["run", "fig4-with-pv", "--seed", "4", "--set", "duration=8", "--out", o], dir.path());
        assert_eq!(code(&out), 0);
    }
    let a = std::fs::read(dir.path().join("a/trajectory.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &["sweep", "--axis", "N", "--values", "3..4", "--seeds", "1,2", "--set", "duration=4", "--out", "s"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cells = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 4);
    let summary = std::fs::read_to_string(dir.path().join("s/sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    assert!(summary.starts_with("axis,value,runs,failed,formed,mean_formation_time,mean_controller_ms"));
}

#[test]
fn single_cell_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--set", "duration=25", "--set", "hdv.alpha=0.6"];
    let mut sweep_args = vec!["sweep", "--axis", "alpha", "--values", "0.6", "--seeds", "3", "--out", "s"];
    sweep_args.extend(args);
    assert_eq!(code(&cli(&sweep_args, dir.path())), 0);
    let mut run_args = vec!["run", "--seed", "3", "--out", "r"];
    run_args.extend(args);
    assert_eq!(code(&cli(&run_args, dir.path())), 0);

    let meta = read_json(&dir.path().join("r/meta.json"));
    let mut rdr = csv_rows(&dir.path().join("s/sweep.csv"));
    assert_eq!(rdr.len(), 1);
    let row = rdr.remove(0);
    let tf = row["formation_time"].clone();
    match meta["formation_time"].as_f64() {
        Some(t) => assert_eq!(tf.parse::<f64>().unwrap(), t),
        None => assert_eq!(tf, ""),
    }
    assert_eq!(row["fail_safe_steps"], meta["metrics"]["fail_safe_steps"].to_string());
    assert_eq!(row["status"], "ok");
}

/// Minimal header-keyed CSV reader for the sweep table (no quoted fields).
fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

#[test]
fn sweep_without_axis_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(&["sweep", "fig3-no-pv"], dir.path())), 3);
    assert_eq!(code(&cli(&["sweep", "--axis", "gamma", "--values", "1"], dir.path())), 3);
    assert_eq!(code(&cli(&["sweep", "--axis", "N", "--values", "x"], dir.path())), 3);
}

#[test]
fn sweep_with_only_failed_cells_fails() {
    let dir = tempfile::tempdir().unwrap();
    // N = 1 leaves no follower to form a platoon with
    let out = cli(&["sweep", "--axis", "N", "--values", "1", "--set", "duration=1", "--out", "s"], dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn feasibility_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["check-feasibility", "fig3-no-pv"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("road_length"));

    let out = cli(&["check-feasibility", "--set", "limits.road_length=1000"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["platoon_feasible"], true);
    assert!(report["tau_p"].as_f64().unwrap() > 0.0);

    // the CAV cannot brake long enough on 30 m to absorb the surplus
    let out = cli(&["check-feasibility", "--set", "limits.road_length=30"], dir.path());
    assert_eq!(code(&out), 1);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["platoon_feasible"], false);
    assert!(report["tau_p"].as_f64().unwrap() > report["t_f_upper"].as_f64().unwrap());
}

use platoon_rhc::io::{read_trajectory, trajectory_rows, write_run};
use platoon_rhc::sim::{preset, run, summarize, sweep, Scenario, SweepAxis, PRESET_NAMES};

fn shortened(name: &str, duration: f64) -> Scenario {
    Scenario {
        duration,
        ..preset(name).unwrap()
    }
}

#[test]
fn presets_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in PRESET_NAMES {
        let sc = preset(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, sc.to_toml_string().unwrap()).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), sc, "{name}");
    }
}

#[test]
fn loaded_scenario_reproduces_the_preset_run() {
    let dir = tempfile::tempdir().unwrap();
    let sc = shortened("fig4-with-pv", 5.0);
    let path = dir.path().join("s.toml");
    std::fs::write(&path, sc.to_toml_string().unwrap()).unwrap();
    let a = run(&sc).unwrap();
    let b = run(&Scenario::load(&path).unwrap()).unwrap();
    assert_eq!(trajectory_rows(&a), trajectory_rows(&b));

    write_run(&b, &dir.path().join("out")).unwrap();
    let back = read_trajectory(&dir.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(back, trajectory_rows(&a));
}

#[test]
fn sweep_results_do_not_depend_on_thread_count() {
    let base = shortened("table3-scaling", 6.0);
    let values = [3.0, 4.0, 5.0];
    let seeds = [1, 2];
    let strip = |cells: Vec<platoon_rhc::sim::SweepCell>| {
        cells
            .into_iter()
            .map(|c| (c.value, c.seed, c.formation_time, c.fail_safe_steps, c.error))
            .collect::<Vec<_>>()
    };
    let one = sweep(&base, SweepAxis::N, &values, &seeds, Some(1)).unwrap();
    let many = sweep(&base, SweepAxis::N, &values, &seeds, Some(4)).unwrap();
    let summary = summarize(&one);
    assert_eq!(strip(one), strip(many));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|s| s.runs == 2 && s.failed == 0));
}

#[test]
fn sweep_cell_matches_a_direct_run() {
    let base = shortened("fig6-sensitivity", 20.0);
    let cells = sweep(&base, SweepAxis::Alpha, &[0.6], &[2], Some(1)).unwrap();
    let direct = run(&Scenario {
        seed: 2,
        hdv: platoon_rhc::sim::HdvPopulation { alpha: 0.6, ..base.hdv.clone() },
        ..base.clone()
    })
    .unwrap();
    assert_eq!(cells[0].formation_time, direct.formation_time);
    assert_eq!(cells[0].fail_safe_steps, direct.metrics.fail_safe_steps);
}

#[test]
fn hard_bounds_hold_on_single_run_presets() {
    for name in ["fig3-no-pv", "fig4-with-pv"] {
        let sc = shortened(name, 15.0);
        let r = run(&sc).unwrap();
        let lim = &sc.limits;
        for row in &r.rows {
            for v in &row.vehicles {
                assert!(v.state.speed >= lim.v_min && v.state.speed <= lim.v_max, "{name} step {}", row.step);
                assert!(v.state.accel >= lim.u_min && v.state.accel <= lim.u_max, "{name} step {}", row.step);
            }
        }
        assert_eq!(r.metrics.speed_violations + r.metrics.input_violations + r.metrics.cav_pv_violations, 0);
    }
}

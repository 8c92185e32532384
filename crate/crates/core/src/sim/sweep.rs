//! Parameter sweeps over the cross product of values and seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::run;
use super::scenario::{Scenario, SweepAxis};
use crate::error::{Error, Result};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "PLATOON_RHC_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub formation_time: Option<f64>,
    pub controller_ms_mean: f64,
    pub controller_ms_max: f64,
    pub fail_safe_steps: usize,
    /// Set when the run failed; the other fields are then zero or empty.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: f64,
    pub runs: usize,
    pub failed: usize,
    /// Runs with a formation time.
    pub formed: usize,
    /// Mean over formed runs.
    pub mean_formation_time: Option<f64>,
    /// Mean over successful runs.
    pub mean_controller_ms: Option<f64>,
}

/// Scenario for one sweep cell.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64, seed: u64) -> Result<Scenario> {
    let mut sc = base.clone();
    sc.seed = seed;
    sc.sweep = None;
    match axis {
        SweepAxis::Alpha => sc.hdv.alpha = value,
        SweepAxis::Beta => sc.hdv.beta = value,
        SweepAxis::DesiredSpeed => sc.hdv.desired_speed = value,
        SweepAxis::Rho => sc.hdv.rho = value,
        SweepAxis::N => {
            if value < 2.0 || value.fract() != 0.0 {
                return Err(Error::param("N", format!("{value} is not an integer of at least 2")));
            }
            sc.n_vehicles = value as usize;
            sc.initial.hdv_speeds = None;
            sc.initial.headways = None;
        }
    }
    sc.validate()?;
    Ok(sc)
}

fn run_cell(base: &Scenario, axis: SweepAxis, value: f64, seed: u64) -> SweepCell {
    let outcome = apply_axis(base, axis, value, seed).and_then(|sc| run(&sc));
    match outcome {
        Ok(r) => SweepCell {
            value,
            seed,
            formation_time: r.formation_time,
            controller_ms_mean: r.metrics.controller_ms_mean,
            controller_ms_max: r.metrics.controller_ms_max,
            fail_safe_steps: r.metrics.fail_safe_steps,
            error: None,
        },
        Err(e) => SweepCell {
            value,
            seed,
            formation_time: None,
            controller_ms_mean: 0.0,
            controller_ms_max: 0.0,
            fail_safe_steps: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs every `(value, seed)` pair; cells are ordered value-major.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64], seeds: &[u64], threads: Option<usize>) -> Result<Vec<SweepCell>> {
    let jobs: Vec<(f64, u64)> = values.iter().flat_map(|v| seeds.iter().map(move |s| (*v, *s))).collect();
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.or_else(thread_cap) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|(v, s)| run_cell(base, axis, *v, *s)).collect()))
}

/// One aggregate row per distinct value, in first-appearance order.
pub fn summarize(cells: &[SweepCell]) -> Vec<SweepSummary> {
    let mut values: Vec<f64> = Vec::new();
    for c in cells {
        if !values.contains(&c.value) {
            values.push(c.value);
        }
    }
    values
        .into_iter()
        .map(|value| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.value == value).collect();
            let ok: Vec<&&SweepCell> = group.iter().filter(|c| c.error.is_none()).collect();
            let times: Vec<f64> = ok.iter().filter_map(|c| c.formation_time).collect();
            let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            let ms: Vec<f64> = ok.iter().map(|c| c.controller_ms_mean).collect();
            SweepSummary {
                value,
                runs: group.len(),
                failed: group.len() - ok.len(),
                formed: times.len(),
                mean_formation_time: mean(&times),
                mean_controller_ms: mean(&ms),
            }
        })
        .collect()
}

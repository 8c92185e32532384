//! Output files: long-format trajectory and estimate tables, run metadata,
//! sweep tables, and a reader for the trajectory table.
//!
//! `trajectory.csv` has one row per vehicle per step:
//!
//! | column | meaning |
//! |---|---|
//! | `step`, `t` | step index and time [s] at the start of the step |
//! | `id`, `kind` | vehicle id (0 PV, 1 CAV, 2.. HDVs) and `pv`/`cav`/`hdv` |
//! | `position`, `speed`, `accel` | state at `t` and the input applied over the step |
//! | `headway` | gap to the vehicle ahead [m]; empty for the front vehicle |
//! | `safe_gap` | `ρ v + s₀` of this vehicle; empty for the PV |
//! | `e_gap`, `e_ref` | CAV-to-last-HDV gap and its reference [m] |
//! | `qp_status`, `qp_iterations`, `kkt_residual`, `active_slacks` | solver diagnostics for the step |
//! | `gap_residual`, `speed_residual` | platoon RMS residuals at `t` |
//!
//! Step-level columns repeat on every row of the step. Wall-clock times are
//! excluded so identical runs give identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hdv::params_from_gamma;
use crate::sim::{RunResult, SweepCell, SweepSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub id: usize,
    pub kind: String,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub headway: Option<f64>,
    pub safe_gap: Option<f64>,
    pub e_gap: f64,
    pub e_ref: f64,
    pub qp_status: String,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub active_slacks: usize,
    pub gap_residual: f64,
    pub speed_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub step: usize,
    pub t: f64,
    pub id: usize,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    /// Empty when `γ₂` is too small to invert.
    pub eta: Option<f64>,
    pub nu: Option<f64>,
    pub rho: Option<f64>,
}

pub fn trajectory_rows(result: &RunResult) -> Vec<TrajectoryRow> {
    let mut out = Vec::new();
    for r in &result.rows {
        let d = &r.diagnostics;
        for v in &r.vehicles {
            out.push(TrajectoryRow {
                step: r.step,
                t: r.t,
                id: v.id,
                kind: v.kind.as_str().to_string(),
                position: v.state.position,
                speed: v.state.speed,
                accel: v.state.accel,
                headway: v.headway,
                safe_gap: v.safe_gap,
                e_gap: d.e_gap,
                e_ref: d.e_ref,
                qp_status: d.status.as_str().to_string(),
                qp_iterations: d.iterations,
                kkt_residual: d.kkt_residual,
                active_slacks: d.active_slacks,
                gap_residual: r.residuals.gap,
                speed_residual: r.residuals.speed,
            });
        }
    }
    out
}

pub fn estimate_rows(result: &RunResult) -> Vec<EstimateRow> {
    let tau = result.scenario.tau();
    let mut out = Vec::new();
    for r in &result.rows {
        for e in &r.estimates {
            let p = params_from_gamma(&e.gamma, tau).ok();
            out.push(EstimateRow {
                step: r.step,
                t: r.t,
                id: e.id,
                g1: e.gamma.g1(),
                g2: e.gamma.g2(),
                g3: e.gamma.g3(),
                eta: p.map(|p| p.eta),
                nu: p.map(|p| p.nu),
                rho: p.map(|p| p.rho),
            });
        }
    }
    out
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], header: &[&str], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    // explicit header so empty tables still carry the schema
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const TRAJECTORY_COLUMNS: [&str; 17] = [
    "step",
    "t",
    "id",
    "kind",
    "position",
    "speed",
    "accel",
    "headway",
    "safe_gap",
    "e_gap",
    "e_ref",
    "qp_status",
    "qp_iterations",
    "kkt_residual",
    "active_slacks",
    "gap_residual",
    "speed_residual",
];

pub const ESTIMATE_COLUMNS: [&str; 9] = ["step", "t", "id", "g1", "g2", "g3", "eta", "nu", "rho"];

pub fn write_trajectory<W: Write>(result: &RunResult, w: W) -> Result<()> {
    write_rows(&trajectory_rows(result), &TRAJECTORY_COLUMNS, w)
}

pub fn write_estimates<W: Write>(result: &RunResult, w: W) -> Result<()> {
    write_rows(&estimate_rows(result), &ESTIMATE_COLUMNS, w)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?;
    Ok(rows)
}

/// Metadata document written next to the tables.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta<'a> {
    pub version: &'static str,
    pub seed: u64,
    pub scenario: &'a crate::sim::Scenario,
    pub hdv_params: &'a [crate::hdv::OvmParams],
    pub feasibility: Option<&'a crate::feasibility::FeasibilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasibility_error: Option<&'a str>,
    pub formation_time: Option<f64>,
    pub steps: usize,
    pub metrics: &'a crate::sim::RunMetrics,
}

pub fn run_meta(result: &RunResult) -> RunMeta<'_> {
    RunMeta {
        version: crate::VERSION,
        seed: result.seed,
        scenario: &result.scenario,
        hdv_params: &result.hdv_params,
        feasibility: result.feasibility.as_ref(),
        feasibility_error: result.feasibility_error.as_deref(),
        formation_time: result.formation_time,
        steps: result.rows.len(),
        metrics: &result.metrics,
    }
}

/// Writes `trajectory.csv`, `estimates.csv` and `meta.json` into `dir`.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(result, BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    write_estimates(result, BufWriter::new(File::create(dir.join("estimates.csv"))?))?;
    let mut meta = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut meta, &run_meta(result))?;
    meta.write_all(b"\n")?;
    meta.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SweepRow<'a> {
    axis: &'a str,
    value: f64,
    seed: u64,
    formation_time: Option<f64>,
    controller_ms_mean: f64,
    controller_ms_max: f64,
    fail_safe_steps: usize,
    status: &'a str,
    error: Option<&'a str>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummaryRow<'a> {
    axis: &'a str,
    value: f64,
    runs: usize,
    failed: usize,
    formed: usize,
    mean_formation_time: Option<f64>,
    mean_controller_ms: Option<f64>,
}

/// Writes `sweep.csv` (one row per cell) and `sweep_summary.csv` (one row per value).
pub fn write_sweep(axis: &str, cells: &[SweepCell], summary: &[SweepSummary], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|c| SweepRow {
            axis,
            value: c.value,
            seed: c.seed,
            formation_time: c.formation_time,
            controller_ms_mean: c.controller_ms_mean,
            controller_ms_max: c.controller_ms_max,
            fail_safe_steps: c.fail_safe_steps,
            status: if c.error.is_some() { "failed" } else { "ok" },
            error: c.error.as_deref(),
        })
        .collect();
    write_rows(
        &rows,
        &[
            "axis",
            "value",
            "seed",
            "formation_time",
            "controller_ms_mean",
            "controller_ms_max",
            "fail_safe_steps",
            "status",
            "error",
        ],
        BufWriter::new(File::create(dir.join("sweep.csv"))?),
    )?;
    let rows: Vec<SummaryRow> = summary
        .iter()
        .map(|s| SummaryRow {
            axis,
            value: s.value,
            runs: s.runs,
            failed: s.failed,
            formed: s.formed,
            mean_formation_time: s.mean_formation_time,
            mean_controller_ms: s.mean_controller_ms,
        })
        .collect();
    write_rows(
        &rows,
        &["axis", "value", "runs", "failed", "formed", "mean_formation_time", "mean_controller_ms"],
        BufWriter::new(File::create(dir.join("sweep_summary.csv"))?),
    )
}

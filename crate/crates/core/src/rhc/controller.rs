//! One receding-horizon step: predict, condense, solve, apply the first input.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::chain::{build_prediction_chain, PredictionChain};
use super::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use crate::domain::{RoadLimits, SafetyParams, VehicleState};
use crate::error::{Error, Result};
use crate::hdv::GammaVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub tau: f64,
    pub w_tracking: f64,
    pub w_effort: f64,
    pub slack_penalty: f64,
    pub max_iterations: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            horizon: 20,
            tau: 0.1,
            w_tracking: 1.0,
            w_effort: 1.0,
            slack_penalty: 1e4,
            max_iterations: 500,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", "must be positive"));
        }
        if !(self.w_tracking > 0.0) || !(self.w_effort > 0.0) {
            return Err(Error::param("weights", "tracking and effort weights must be positive"));
        }
        if !(self.slack_penalty > self.w_tracking) {
            return Err(Error::param("slack_penalty", "must exceed the tracking weight"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Positions and speeds at steps `0..=H` of a PV braking as hard as allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct PvPrediction {
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
}

pub fn worst_case_pv_trajectory(pv: &VehicleState, tau: f64, horizon: usize, limits: &RoadLimits) -> PvPrediction {
    let mut position = Vec::with_capacity(horizon + 1);
    let mut speed = Vec::with_capacity(horizon + 1);
    let mut accel = Vec::with_capacity(horizon);
    let (mut p, mut v) = (pv.position, pv.speed);
    position.push(p);
    speed.push(v);
    for _ in 0..horizon {
        let u = limits.u_min.max((limits.v_min - v) / tau);
        p += v * tau + 0.5 * tau * tau * u;
        v += u * tau;
        accel.push(u);
        position.push(p);
        speed.push(v);
    }
    PvPrediction { position, speed, accel }
}

/// Sum of HDV safe gaps, `Σ_{i≥2} (ρ_i v_i + s₀)`; speeds ordered from id 2.
pub fn build_reference(hdv_speeds: &[f64], sp: &SafetyParams) -> f64 {
    hdv_speeds
        .iter()
        .enumerate()
        .map(|(j, v)| sp.safe_gap_of(j + 2, *v))
        .sum()
}

/// Leader-to-last-follower gap, `p₁ − p_N − (N−1)l_c`.
pub fn leader_follower_gap(platoon: &[VehicleState], l_c: f64) -> f64 {
    let last = platoon.last().expect("non-empty platoon");
    platoon[0].position - last.position - (platoon.len() - 1) as f64 * l_c
}

/// Condensed QP over `x = [U; σ]` with one slack per HDV.
///
/// `e_ref[n-1]` is the reference at step `n`; it does not depend on `U`.
pub fn assemble_qp(
    chain: &PredictionChain,
    pv: Option<&PvPrediction>,
    e_ref: &[f64],
    cfg: &ControllerConfig,
    sp: &SafetyParams,
    limits: &RoadLimits,
) -> QpProblem {
    let h = chain.horizon;
    let ns = chain.n_hdv();
    let nx = h + ns;
    let l_c = limits.vehicle_length;
    let s0 = sp.standstill;
    let last = chain.hdvs.last().map(|p| &p.position).unwrap_or(&chain.cav.position);

    let mut hessian = DMatrix::zeros(nx, nx);
    let mut gradient = DVector::zeros(nx);
    // tracking: r_n = p₁[n] − p_N[n] − (N−1)l_c − e_r[n]
    for n in 1..=h {
        let c = chain.cav.position.row(n) - last.row(n);
        let d = chain.cav.position.offset[n] - last.offset[n] - ns as f64 * l_c - e_ref[n - 1];
        let mut block = hessian.view_mut((0, 0), (h, h));
        block.ger(cfg.w_tracking, &c.transpose(), &c.transpose(), 1.0);
        let mut g = gradient.rows_mut(0, h);
        g.axpy(cfg.w_tracking * d, &c.transpose(), 1.0);
    }
    for i in 0..h {
        hessian[(i, i)] += cfg.w_effort;
    }
    for i in h..nx {
        hessian[(i, i)] = cfg.slack_penalty;
    }

    let mut rows: Vec<RowDVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |coeff: RowDVector<f64>, slack: Option<usize>, b: f64| {
        let mut r = RowDVector::zeros(nx);
        r.columns_mut(0, h).copy_from(&coeff);
        if let Some(j) = slack {
            r[h + j] = 1.0;
        }
        rows.push(r);
        rhs.push(b);
    };
    let rho1 = sp.rho(1);
    for n in 1..=h {
        let v1 = &chain.cav.speed;
        // v_min ≤ v₁[n] ≤ v_max
        push(v1.row(n), None, limits.v_min - v1.offset[n]);
        push(-v1.row(n), None, v1.offset[n] - limits.v_max);
        // p₀[n] − p₁[n] − l_c ≥ ρ₁ v₁[n] + s₀
        if let Some(pv) = pv {
            let p1 = &chain.cav.position;
            let coeff = -(p1.row(n) + v1.row(n) * rho1);
            let b = p1.offset[n] + rho1 * v1.offset[n] + l_c + s0 - pv.position[n];
            push(coeff, None, b);
        }
        // p_{j-1}[n] − p_j[n] − l_c − ρ_j v_j[n] − s₀ + σ_j ≥ 0
        for (j, hdv) in chain.hdvs.iter().enumerate() {
            let lead = if j == 0 { &chain.cav.position } else { &chain.hdvs[j - 1].position };
            let rho = sp.rho(j + 2);
            let coeff = lead.row(n) - hdv.position.row(n) - hdv.speed.row(n) * rho;
            let b = -(lead.offset[n] - hdv.position.offset[n] - rho * hdv.speed.offset[n]) + l_c + s0;
            push(coeff, Some(j), b);
        }
    }

    let a_ineq = if rows.is_empty() {
        DMatrix::zeros(0, nx)
    } else {
        DMatrix::from_rows(&rows)
    };
    let mut lower = DVector::from_element(nx, 0.0);
    let mut upper = DVector::from_element(nx, f64::INFINITY);
    for i in 0..h {
        lower[i] = limits.u_min;
        upper[i] = limits.u_max;
    }
    QpProblem {
        hessian,
        gradient,
        a_ineq,
        b_ineq: DVector::from_vec(rhs),
        lower,
        upper,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    Degraded,
    /// The QP had no solution; maximum braking toward `v_min` was applied.
    FailSafe,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Degraded => "degraded",
            StepStatus::FailSafe => "fail_safe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: StepStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// HDVs whose softened safety rows needed a positive slack.
    pub active_slacks: usize,
    pub solve_time_ms: f64,
    pub e_gap: f64,
    pub e_ref: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: f64,
    /// Full optimal input sequence; empty under fail-safe.
    pub plan: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

/// What the CAV observes at one step.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub pv: Option<&'a VehicleState>,
    /// CAV first, then HDVs in order.
    pub platoon: &'a [VehicleState],
    /// One estimate per HDV.
    pub gammas: &'a [GammaVector],
}

pub fn fail_safe_input(v1: f64, tau: f64, limits: &RoadLimits) -> f64 {
    limits.u_min.max((limits.v_min - v1) / tau)
}

pub fn control_step(
    snap: &Snapshot<'_>,
    cfg: &ControllerConfig,
    sp: &SafetyParams,
    limits: &RoadLimits,
) -> Result<ControlOutput> {
    let start = Instant::now();
    let l_c = limits.vehicle_length;
    let chain = build_prediction_chain(snap.platoon, snap.gammas, l_c, cfg.tau, cfg.horizon)?;
    let pv = snap.pv.map(|p| worst_case_pv_trajectory(p, cfg.tau, cfg.horizon, limits));
    let hdv_speeds: Vec<f64> = snap.platoon[1..].iter().map(|s| s.speed).collect();
    let e_gap = leader_follower_gap(snap.platoon, l_c);
    // e_r(k) from measured speeds, held over the horizon
    let e_ref = build_reference(&hdv_speeds, sp);
    let qp = assemble_qp(&chain, pv.as_ref(), &vec![e_ref; cfg.horizon], cfg, sp, limits);
    let settings = QpSettings {
        max_iterations: cfg.max_iterations,
        ..QpSettings::default()
    };
    let h = cfg.horizon;
    let out = match solve_qp(&qp, &settings) {
        Ok(sol) => {
            let status = match sol.status {
                QpStatus::Optimal => StepStatus::Optimal,
                QpStatus::Degraded => StepStatus::Degraded,
            };
            let active_slacks = sol.x.rows(h, sol.x.len() - h).iter().filter(|s| **s > 1e-9).count();
            ControlOutput {
                u: limits.clamp_accel(sol.x[0]),
                plan: sol.x.rows(0, h).iter().copied().collect(),
                diagnostics: StepDiagnostics {
                    status,
                    iterations: sol.iterations,
                    kkt_residual: sol.kkt.max(),
                    active_slacks,
                    solve_time_ms: 0.0,
                    e_gap,
                    e_ref,
                    failure: None,
                },
            }
        }
        Err(e) => ControlOutput {
            u: fail_safe_input(snap.platoon[0].speed, cfg.tau, limits),
            plan: Vec::new(),
            diagnostics: StepDiagnostics {
                status: StepStatus::FailSafe,
                iterations: 0,
                kkt_residual: f64::NAN,
                active_slacks: 0,
                solve_time_ms: 0.0,
                e_gap,
                e_ref,
                failure: Some(e.to_string()),
            },
        },
    };
    let mut out = out;
    out.diagnostics.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

//! Closed-form feasibility pre-checks on a finite roadway.
//!
//! Both checks assume the most aggressive admissible CAV profile: brake at
//! `u_min` until `v_min`, then cruise. The results are advisory; a simulation
//! runs whether or not the checks pass.

use serde::{Deserialize, Serialize};

use crate::domain::{RoadLimits, SafetyParams, VehicleState};
use crate::error::{Error, Result};

/// Extreme braking law: `u_min` while above `v_min`, zero at `v_min`.
pub fn piecewise_extreme_control(v: f64, limits: &RoadLimits) -> f64 {
    if v > limits.v_min {
        limits.u_min
    } else {
        0.0
    }
}

/// Upper bound on the final time; unbounded when the CAV can stop short of
/// the end of the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum UpperBound {
    Finite(f64),
    Unbounded,
}

impl UpperBound {
    pub fn finite(&self) -> Option<f64> {
        match self {
            UpperBound::Finite(t) => Some(*t),
            UpperBound::Unbounded => None,
        }
    }

    pub fn admits(&self, t: f64) -> bool {
        match self {
            UpperBound::Finite(b) => t <= *b,
            UpperBound::Unbounded => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonBounds {
    /// Time to cover the road at the initial speed.
    pub t_lower: f64,
    /// Time to cover the road under [`piecewise_extreme_control`].
    pub t_upper: UpperBound,
    /// Distance travelled while braking down to `v_min`.
    pub switch_distance: f64,
    /// Duration of the braking phase.
    pub switch_time: f64,
}

pub fn horizon_bounds(v1_0: f64, limits: &RoadLimits, road_length: f64) -> Result<HorizonBounds> {
    if !(v1_0 > 0.0 && v1_0.is_finite()) {
        return Err(Error::param("v1_0", "initial CAV speed must be positive"));
    }
    if !(road_length > 0.0 && road_length.is_finite()) {
        return Err(Error::param("road_length", "must be positive"));
    }
    if v1_0 < limits.v_min || v1_0 > limits.v_max {
        return Err(Error::param("v1_0", "initial CAV speed outside [v_min, v_max]"));
    }
    let u = limits.u_min;
    let v_min = limits.v_min;
    let switch_distance = (v_min * v_min - v1_0 * v1_0) / (2.0 * u);
    let switch_time = (v_min - v1_0) / u;
    let t_upper = if road_length <= switch_distance {
        // braking-phase root of v t + u t^2 / 2 = L
        let disc = (v1_0 * v1_0 + 2.0 * u * road_length).max(0.0);
        UpperBound::Finite((-v1_0 + disc.sqrt()) / u)
    } else if v_min > 0.0 {
        UpperBound::Finite(switch_time + (road_length - switch_distance) / v_min)
    } else {
        UpperBound::Unbounded
    };
    Ok(HorizonBounds {
        t_lower: road_length / v1_0,
        t_upper,
        switch_distance,
        switch_time,
    })
}

/// When (and whether) the braking profile closes the surplus spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosingEstimate {
    /// The spacing surplus is already zero.
    AlreadyFormed,
    /// Closes after `tau_p` seconds, either while braking or while cruising at `v_min`.
    Closes { tau_p: f64, during_braking: bool },
    /// The last HDV is not faster than `v_min`, so the surplus never closes.
    NeverCloses,
    /// Negative surplus with no real closing time.
    ComplexRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub t_f_lower: f64,
    /// `None` when unbounded.
    pub t_f_upper: Option<f64>,
    pub switch_distance: f64,
    /// Sum over HDVs of headway minus safe gap at the initial time.
    pub gap_surplus: f64,
    pub closing: ClosingEstimate,
    pub tau_p: Option<f64>,
    pub already_formed: bool,
    pub platoon_feasible: bool,
}

/// Sum of `dp_i - s_i` over the HDVs of a platoon given CAV first.
pub fn gap_surplus(states: &[VehicleState], sp: &SafetyParams, l_c: f64) -> f64 {
    states
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let dp = w[0].position - w[1].position - l_c;
            dp - sp.safe_gap_of(j + 2, w[1].speed)
        })
        .sum()
}

/// Time at which the CAV braking profile closes `surplus` against a last HDV
/// cruising at `v_n`.
fn closing_time(v1: f64, v_n: f64, surplus: f64, bounds: &HorizonBounds, limits: &RoadLimits) -> ClosingEstimate {
    let u = limits.u_min;
    let rel = v_n - v1;
    // braking phase: (v_N - v_1) t - u t^2 / 2 = surplus
    let disc = rel * rel - 2.0 * u * surplus;
    if surplus < 0.0 && disc < 0.0 {
        return ClosingEstimate::ComplexRoot;
    }
    if surplus < 0.0 {
        return ClosingEstimate::NeverCloses;
    }
    let t_brake = (rel - disc.sqrt()) / u;
    if t_brake <= bounds.switch_time {
        return ClosingEstimate::Closes {
            tau_p: t_brake,
            during_braking: true,
        };
    }
    // cruising phase: CAV covered L_s by t_s then moves at v_min
    let v_min = limits.v_min;
    if v_n <= v_min {
        return ClosingEstimate::NeverCloses;
    }
    let tau_p = (surplus + bounds.switch_distance - v_min * bounds.switch_time) / (v_n - v_min);
    ClosingEstimate::Closes {
        tau_p,
        during_braking: false,
    }
}

/// Platoon-formability check for the initial states (CAV first) on a road of
/// length `road_length`.
pub fn platoon_feasible(
    states: &[VehicleState],
    sp: &SafetyParams,
    limits: &RoadLimits,
    road_length: f64,
    l_c: f64,
) -> Result<FeasibilityReport> {
    if states.len() < 2 {
        return Err(Error::param("states", "need the CAV and at least one HDV"));
    }
    let v1 = states[0].speed;
    let v_n = states[states.len() - 1].speed;
    let bounds = horizon_bounds(v1, limits, road_length)?;
    let surplus = gap_surplus(states, sp, l_c);

    let closing = if surplus == 0.0 {
        ClosingEstimate::AlreadyFormed
    } else {
        closing_time(v1, v_n, surplus, &bounds, limits)
    };
    let (tau_p, feasible) = match closing {
        ClosingEstimate::AlreadyFormed => (Some(0.0), true),
        ClosingEstimate::Closes { tau_p, .. } => (Some(tau_p), tau_p > 0.0 && bounds.t_upper.admits(tau_p)),
        ClosingEstimate::NeverCloses | ClosingEstimate::ComplexRoot => (None, false),
    };
    Ok(FeasibilityReport {
        t_f_lower: bounds.t_lower,
        t_f_upper: bounds.t_upper.finite(),
        switch_distance: bounds.switch_distance,
        gap_surplus: surplus,
        closing,
        tau_p,
        already_formed: matches!(closing, ClosingEstimate::AlreadyFormed),
        platoon_feasible: feasible,
    })
}

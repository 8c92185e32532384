//! Shared physical types, vehicle-set bookkeeping, gap kinematics and the
//! platoon-formation test.
//!
//! Vehicle ids follow the usual convention for this problem: `0` is the
//! preceding vehicle (PV, optional), `1` is the controlled CAV and `2..=N` are
//! the following human-driven vehicles ordered by distance behind the CAV.
//! Slices of states passed to the functions in this module are in *platoon
//! order*: index 0 is the CAV, index `j` is vehicle id `j + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal state of one vehicle at one time step (SI units, front bumper position).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
}

impl VehicleState {
    pub fn new(position: f64, speed: f64) -> Self {
        VehicleState {
            position,
            speed,
            accel: 0.0,
        }
    }
}

/// Speed and input bounds shared by every vehicle, plus road geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Length of the roadway available for formation; only the feasibility
    /// checks use it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_length: Option<f64>,
    pub vehicle_length: f64,
    pub standstill: f64,
}

impl Default for RoadLimits {
    fn default() -> Self {
        RoadLimits {
            v_min: 0.0,
            v_max: 35.0,
            u_min: -5.0,
            u_max: 3.0,
            road_length: None,
            vehicle_length: 5.0,
            standstill: 3.0,
        }
    }
}

impl RoadLimits {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_min,
            self.v_max,
            self.u_min,
            self.u_max,
            self.vehicle_length,
            self.standstill,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::param("limits", "all limits must be finite"));
        }
        if !(0.0 <= self.v_min && self.v_min < self.v_max) {
            return Err(Error::param("limits.v_min", "require 0 <= v_min < v_max"));
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(Error::param("limits.u_min", "require u_min < 0 < u_max"));
        }
        if self.standstill <= 0.0 {
            return Err(Error::param("limits.standstill", "must be positive"));
        }
        if self.vehicle_length <= 0.0 {
            return Err(Error::param("limits.vehicle_length", "must be positive"));
        }
        if let Some(l) = self.road_length {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param("limits.road_length", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn clamp_accel(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// Per-vehicle safe time headways and the common standstill distance.
///
/// `time_headways[j]` belongs to the vehicle at platoon index `j` (id `j + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub time_headways: Vec<f64>,
    pub standstill: f64,
}

impl SafetyParams {
    pub fn new(time_headways: Vec<f64>, standstill: f64) -> Result<Self> {
        if time_headways.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::param("rho", "time headways must be positive"));
        }
        if !(standstill > 0.0) {
            return Err(Error::param("standstill", "must be positive"));
        }
        Ok(SafetyParams {
            time_headways,
            standstill,
        })
    }

    /// Same headway for every vehicle of a platoon with `n` members.
    pub fn uniform(rho: f64, standstill: f64, n: usize) -> Result<Self> {
        Self::new(vec![rho; n], standstill)
    }

    /// Time headway of vehicle `id` (1 = CAV).
    pub fn rho(&self, id: usize) -> f64 {
        self.time_headways[id - 1]
    }

    pub fn safe_gap_of(&self, id: usize, speed: f64) -> f64 {
        safe_gap(speed, self.rho(id), self.standstill)
    }
}

/// RMS tolerances used to decide that a platoon has formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonCriteria {
    pub eps_dp: f64,
    pub eps_v: f64,
}

impl Default for PlatoonCriteria {
    fn default() -> Self {
        PlatoonCriteria {
            eps_dp: 1.0,
            eps_v: 0.5,
        }
    }
}

impl PlatoonCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_dp > 0.0 && self.eps_v > 0.0) {
            return Err(Error::param("platoon", "tolerances must be positive"));
        }
        Ok(())
    }
}

/// Minimum lawful headway `rho * v + s0`.
pub fn safe_gap(v: f64, rho: f64, s0: f64) -> f64 {
    rho * v + s0
}

/// Bumper-to-bumper spacing between a leader and its follower.
pub fn headway(lead: &VehicleState, follow: &VehicleState, l_c: f64) -> Result<f64> {
    if lead.position < follow.position {
        return Err(Error::OrderingViolation {
            lead: lead.position,
            follow: follow.position,
        });
    }
    Ok(lead.position - follow.position - l_c)
}

/// Leader speed minus follower speed.
pub fn approach_rate(lead: &VehicleState, follow: &VehicleState) -> f64 {
    lead.speed - follow.speed
}

/// Rear-end constraint `headway >= rho_follow * v_follow + s0`.
pub fn safety_satisfied(
    lead: &VehicleState,
    follow: &VehicleState,
    rho_follow: f64,
    s0: f64,
    l_c: f64,
) -> Result<bool> {
    Ok(headway(lead, follow, l_c)? >= safe_gap(follow.speed, rho_follow, s0))
}

/// The two residuals compared against [`PlatoonCriteria`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatoonResiduals {
    /// `sqrt(sum_{i>=2} (dp_i - s_i)^2)`
    pub gap: f64,
    /// `sqrt(sum_{i>=1} (v_i - mean v)^2)`
    pub speed: f64,
}

impl PlatoonResiduals {
    pub fn within(&self, crit: &PlatoonCriteria) -> bool {
        self.gap <= crit.eps_dp && self.speed <= crit.eps_v
    }
}

/// Residuals for a platoon given in platoon order (CAV first).
pub fn platoon_residuals(states: &[VehicleState], sp: &SafetyParams, l_c: f64) -> PlatoonResiduals {
    let gap = states
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let dp = w[0].position - w[1].position - l_c;
            let s = safe_gap(w[1].speed, sp.time_headways[j + 1], sp.standstill);
            (dp - s).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let n = states.len().max(1) as f64;
    let mean = states.iter().map(|s| s.speed).sum::<f64>() / n;
    let speed = states
        .iter()
        .map(|s| (s.speed - mean).powi(2))
        .sum::<f64>()
        .sqrt();
    PlatoonResiduals { gap, speed }
}

pub fn platoon_formed(
    states: &[VehicleState],
    sp: &SafetyParams,
    crit: &PlatoonCriteria,
    l_c: f64,
) -> bool {
    platoon_residuals(states, sp, l_c).within(crit)
}

/// A change of membership in the HDV set caused by a lane change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LaneChange {
    /// HDV `id` leaves the lane.
    Departure { id: usize },
    /// A vehicle from an adjacent lane cuts in directly behind `behind`.
    Insertion { behind: usize },
}

/// The ordered set of vehicle ids `{0?, 1, 2, ..., N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleSet {
    pub has_pv: bool,
    pub n_total: usize,
}

/// Result of re-indexing: the new set and where every old id went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reindexed {
    pub set: VehicleSet,
    /// `old_to_new[old_id]`; `None` for a departed vehicle and for id 0 when
    /// there is no PV.
    pub old_to_new: Vec<Option<usize>>,
    /// Id of the inserted vehicle, if any.
    pub inserted: Option<usize>,
}

impl VehicleSet {
    pub fn new(has_pv: bool, n_total: usize) -> Result<Self> {
        if n_total < 2 {
            return Err(Error::param("n_vehicles", "the HDV set must not be empty (N >= 2)"));
        }
        Ok(VehicleSet { has_pv, n_total })
    }

    pub fn ids(&self) -> Vec<usize> {
        let first = if self.has_pv { 0 } else { 1 };
        (first..=self.n_total).collect()
    }

    pub fn hdv_ids(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.n_total
    }

    pub fn hdv_count(&self) -> usize {
        self.n_total - 1
    }

    pub fn reindex_after_lane_change(&self, event: LaneChange) -> Result<Reindexed> {
        let n = self.n_total;
        let mut old_to_new: Vec<Option<usize>> = (0..=n).map(Some).collect();
        if !self.has_pv {
            old_to_new[0] = None;
        }
        match event {
            LaneChange::Departure { id } => {
                if id < 2 || id > n {
                    return Err(Error::InvalidEvent(format!(
                        "departure of id {id}: only HDVs 2..={n} can leave"
                    )));
                }
                if n == 2 {
                    return Err(Error::InvalidEvent(
                        "departure of the only HDV would empty the HDV set".into(),
                    ));
                }
                old_to_new[id] = None;
                for slot in old_to_new.iter_mut().skip(id + 1) {
                    *slot = slot.map(|v| v - 1);
                }
                Ok(Reindexed {
                    set: VehicleSet {
                        has_pv: self.has_pv,
                        n_total: n - 1,
                    },
                    old_to_new,
                    inserted: None,
                })
            }
            LaneChange::Insertion { behind } => {
                if behind < 2 || behind > n {
                    return Err(Error::InvalidEvent(format!(
                        "insertion behind id {behind}: must be an HDV in 2..={n}"
                    )));
                }
                for slot in old_to_new.iter_mut().skip(behind + 1) {
                    *slot = slot.map(|v| v + 1);
                }
                Ok(Reindexed {
                    set: VehicleSet {
                        has_pv: self.has_pv,
                        n_total: n + 1,
                    },
                    old_to_new,
                    inserted: Some(behind + 1),
                })
            }
        }
    }
}

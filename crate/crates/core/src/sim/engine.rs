//! Closed-loop simulation: scripted PV, RHC-controlled CAV, OVM followers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{PvScript, Scenario};
use crate::domain::{
    platoon_residuals, safe_gap, LaneChange, PlatoonCriteria, PlatoonResiduals, RoadLimits, SafetyParams,
    VehicleSet, VehicleState,
};
use crate::error::{Error, Result};
use crate::estimation::{Regressor, RlsEstimator};
use crate::feasibility::{platoon_feasible, FeasibilityReport};
use crate::hdv::{euler_step, ovm_accel, GammaVector, OvmParams};
use crate::rhc::{control_step, ControllerConfig, Snapshot, StepDiagnostics, StepStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Pv,
    Cav,
    Hdv,
}

impl VehicleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VehicleKind::Pv => "pv",
            VehicleKind::Cav => "cav",
            VehicleKind::Hdv => "hdv",
        }
    }
}

/// One vehicle at the start of a step, with the input applied over the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub kind: VehicleKind,
    /// `accel` is the input actually applied after clamping.
    pub state: VehicleState,
    /// Headway to the vehicle ahead; `None` for the front vehicle.
    pub headway: Option<f64>,
    /// Safe gap of this vehicle at its current speed; `None` for the PV.
    pub safe_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdvEstimate {
    pub id: usize,
    pub gamma: GammaVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub vehicles: Vec<VehicleRecord>,
    /// Estimates used by the controller at this step.
    pub estimates: Vec<HdvEstimate>,
    pub diagnostics: StepDiagnostics,
    pub residuals: PlatoonResiduals,
}

/// Forensic snapshot of the first negative headway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub time: f64,
    pub step: usize,
    pub lead_id: usize,
    pub follow_id: usize,
    pub lead: VehicleState,
    pub follow: VehicleState,
    pub headway: f64,
    /// Last recorded step before the collision.
    pub last_step: Option<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Steps where the CAV headway to the PV was below its safe gap.
    pub cav_pv_violations: usize,
    /// Recorded speeds outside `[v_min, v_max]`.
    pub speed_violations: usize,
    /// CAV inputs outside `[u_min, u_max]`.
    pub input_violations: usize,
    pub fail_safe_steps: usize,
    pub degraded_steps: usize,
    pub max_kkt_residual: f64,
    pub min_headway: Option<f64>,
    /// Smallest `headway − safe gap` of the CAV behind the PV.
    pub min_cav_pv_margin: Option<f64>,
    pub controller_ms_mean: f64,
    pub controller_ms_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub scenario: Scenario,
    /// Initial HDV parameters, id 2 first.
    pub hdv_params: Vec<OvmParams>,
    pub rows: Vec<StepRecord>,
    pub formation_time: Option<f64>,
    pub feasibility: Option<FeasibilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasibility_error: Option<String>,
    pub metrics: RunMetrics,
}

/// Earliest recorded time after which every remaining row is within `crit`.
pub fn detect_formation_time(rows: &[StepRecord], crit: &PlatoonCriteria) -> Option<f64> {
    let flags: Vec<(f64, bool)> = rows.iter().map(|r| (r.t, r.residuals.within(crit))).collect();
    formation_time_from_flags(&flags)
}

/// Same as [`detect_formation_time`] over `(t, within)` pairs.
pub fn formation_time_from_flags(flags: &[(f64, bool)]) -> Option<f64> {
    let mut start = None;
    for &(t, ok) in flags.iter().rev() {
        if !ok {
            break;
        }
        start = Some(t);
    }
    start
}

/// Draws `n` HDV parameter sets, each entry uniform within `±perturbation`
/// of its nominal value; desired speeds are capped at `v_max`.
pub fn sample_hdv_params(sc: &Scenario, rng: &mut ChaCha8Rng, n: usize) -> Vec<OvmParams> {
    (0..n).map(|_| sample_one(sc, rng)).collect()
}

fn sample_one(sc: &Scenario, rng: &mut ChaCha8Rng) -> OvmParams {
    let p = sc.hdv.perturbation;
    let mut draw = |nominal: f64| {
        if p == 0.0 {
            nominal
        } else {
            nominal * (1.0 + rng.gen_range(-p..=p))
        }
    };
    let alpha = draw(sc.hdv.alpha);
    let beta = draw(sc.hdv.beta);
    let desired_speed = draw(sc.hdv.desired_speed).min(sc.limits.v_max);
    let rho = draw(sc.hdv.rho);
    OvmParams {
        alpha,
        beta,
        desired_speed,
        rho,
        standstill: sc.limits.standstill,
    }
}

struct Follower {
    params: OvmParams,
    estimator: RlsEstimator,
    /// Regressor measured at the previous step; cleared when the leader changes.
    last_phi: Option<[f64; 3]>,
}

struct World {
    set: VehicleSet,
    pv: Option<VehicleState>,
    /// CAV first.
    platoon: Vec<VehicleState>,
    hdvs: Vec<Follower>,
}

impl World {
    fn safety(&self, cav_rho: f64, standstill: f64) -> SafetyParams {
        let mut rho = Vec::with_capacity(self.platoon.len());
        rho.push(cav_rho);
        rho.extend(self.hdvs.iter().map(|h| h.params.rho));
        SafetyParams {
            time_headways: rho,
            standstill,
        }
    }
}

fn new_estimator(sc: &Scenario) -> Result<RlsEstimator> {
    let e = &sc.estimation;
    RlsEstimator::with_scaled_identity(GammaVector(e.gamma0), e.p0, e.forgetting)
}

fn initial_world(sc: &Scenario, params: &[OvmParams]) -> Result<World> {
    let l_c = sc.limits.vehicle_length;
    let init = &sc.initial;
    let mut platoon = vec![VehicleState::new(0.0, init.cav_speed)];
    for (j, p) in params.iter().enumerate() {
        let v = init.hdv_speeds.as_ref().map_or(init.hdv_speed, |vs| vs[j]);
        let s = safe_gap(v, p.rho, p.standstill);
        let dp = init.headways.as_ref().map_or(init.headway_factor * s, |hs| hs[j]);
        if dp < s {
            return Err(Error::Config(format!(
                "initial headway {dp:.3} m of vehicle {} is below its safe gap {s:.3} m",
                j + 2
            )));
        }
        let lead = platoon[j].position;
        platoon.push(VehicleState::new(lead - l_c - dp, v));
    }
    let pv = sc.pv.as_ref().map(|script| {
        let s = safe_gap(init.cav_speed, sc.cav_rho, sc.limits.standstill);
        VehicleState::new(l_c + script.headway_factor * s, script.speed_at(0.0))
    });
    let hdvs = params
        .iter()
        .map(|p| {
            Ok(Follower {
                params: *p,
                estimator: new_estimator(sc)?,
                last_phi: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World {
        set: VehicleSet::new(pv.is_some(), platoon.len())?,
        pv,
        platoon,
        hdvs,
    })
}

fn apply_lane_change(world: &mut World, event: LaneChange, sc: &Scenario, rng: &mut ChaCha8Rng) -> Result<()> {
    let re = world.set.reindex_after_lane_change(event)?;
    let l_c = sc.limits.vehicle_length;
    match event {
        LaneChange::Departure { id } => {
            world.platoon.remove(id - 1);
            world.hdvs.remove(id - 2);
            // the new follower of the departed vehicle sees a different leader
            if let Some(f) = world.hdvs.get_mut(id - 2) {
                f.last_phi = None;
            }
        }
        LaneChange::Insertion { behind } => {
            let lead = world.platoon[behind - 1];
            let params = sample_one(sc, rng);
            let position = match world.platoon.get(behind) {
                Some(follow) => {
                    let room = lead.position - follow.position - l_c;
                    if room < l_c {
                        return Err(Error::InvalidEvent(format!(
                            "no room to insert behind id {behind}: gap {room:.2} m"
                        )));
                    }
                    0.5 * (lead.position + follow.position)
                }
                None => lead.position - l_c - safe_gap(lead.speed, params.rho, params.standstill),
            };
            let state = VehicleState::new(position, lead.speed);
            world.platoon.insert(behind, state);
            world.hdvs.insert(
                behind - 1,
                Follower {
                    params,
                    estimator: new_estimator(sc)?,
                    last_phi: None,
                },
            );
            if let Some(f) = world.hdvs.get_mut(behind) {
                f.last_phi = None;
            }
        }
    }
    world.set = re.set;
    Ok(())
}

fn hdv_accel(world: &World, j: usize, limits: &RoadLimits) -> f64 {
    let me = &world.platoon[j + 1];
    let lead = &world.platoon[j];
    let dp = lead.position - me.position - limits.vehicle_length;
    let u = ovm_accel(Some(dp), lead.speed - me.speed, me.speed, &world.hdvs[j].params);
    limits.clamp_accel(u)
}

fn pv_accel(script: &PvScript, pv: &VehicleState, t_next: f64, tau: f64, limits: &RoadLimits) -> f64 {
    limits.clamp_accel((script.speed_at(t_next) - pv.speed) / tau)
}

fn record_vehicles(world: &World, inputs_pv: Option<f64>, inputs: &[f64], sc: &Scenario, sp: &SafetyParams) -> Vec<VehicleRecord> {
    let l_c = sc.limits.vehicle_length;
    let mut out = Vec::with_capacity(world.platoon.len() + 1);
    if let (Some(pv), Some(u)) = (world.pv, inputs_pv) {
        out.push(VehicleRecord {
            id: 0,
            kind: VehicleKind::Pv,
            state: VehicleState { accel: u, ..pv },
            headway: None,
            safe_gap: None,
        });
    }
    for (j, s) in world.platoon.iter().enumerate() {
        let ahead = if j == 0 { world.pv.as_ref() } else { Some(&world.platoon[j - 1]) };
        out.push(VehicleRecord {
            id: j + 1,
            kind: if j == 0 { VehicleKind::Cav } else { VehicleKind::Hdv },
            state: VehicleState { accel: inputs[j], ..*s },
            headway: ahead.map(|a| a.position - s.position - l_c),
            safe_gap: Some(sp.safe_gap_of(j + 1, s.speed)),
        });
    }
    out
}

fn check_collision(world: &World, t: f64, step: usize, l_c: f64, last: Option<&StepRecord>) -> Result<()> {
    let mut chain: Vec<(usize, &VehicleState)> = Vec::new();
    if let Some(pv) = &world.pv {
        chain.push((0, pv));
    }
    chain.extend(world.platoon.iter().enumerate().map(|(j, s)| (j + 1, s)));
    for w in chain.windows(2) {
        let (lead_id, lead) = w[0];
        let (follow_id, follow) = w[1];
        let headway = lead.position - follow.position - l_c;
        if headway < 0.0 {
            return Err(Error::CollisionDetected(Box::new(CollisionReport {
                time: t,
                step,
                lead_id,
                follow_id,
                lead: *lead,
                follow: *follow,
                headway,
                last_step: last.cloned(),
            })));
        }
    }
    Ok(())
}

/// Feasibility report for the initial states of `sc`, which must set
/// `limits.road_length`.
pub fn check_feasibility(sc: &Scenario) -> Result<FeasibilityReport> {
    sc.validate()?;
    let len = sc
        .limits
        .road_length
        .ok_or_else(|| Error::Config("the feasibility check needs limits.road_length".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let hdv_params = sample_hdv_params(sc, &mut rng, sc.n_vehicles - 1);
    let world = initial_world(sc, &hdv_params)?;
    let sp = world.safety(sc.cav_rho, sc.limits.standstill);
    platoon_feasible(&world.platoon, &sp, &sc.limits, len, sc.limits.vehicle_length)
}

pub fn run(sc: &Scenario) -> Result<RunResult> {
    sc.validate()?;
    let tau = sc.tau();
    let limits = sc.limits;
    let l_c = limits.vehicle_length;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let hdv_params = sample_hdv_params(sc, &mut rng, sc.n_vehicles - 1);
    let mut world = initial_world(sc, &hdv_params)?;

    let sp0 = world.safety(sc.cav_rho, limits.standstill);
    let (feasibility, feasibility_error) = match limits.road_length {
        Some(len) => match platoon_feasible(&world.platoon, &sp0, &limits, len, l_c) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, None),
    };

    let cfg: ControllerConfig = sc.controller;
    let mut events = sc.lane_changes.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;
    let mut rows: Vec<StepRecord> = Vec::with_capacity(sc.n_steps());
    let mut metrics = RunMetrics::default();
    let mut ms_sum = 0.0;

    for step in 0..sc.n_steps() {
        let t = step as f64 * tau;
        while next_event < events.len() && events[next_event].time <= t + 1e-9 {
            apply_lane_change(&mut world, events[next_event].event, sc, &mut rng)?;
            next_event += 1;
        }

        // estimation: last step's regressor against this step's speed
        for j in 0..world.hdvs.len() {
            let v_now = world.platoon[j + 1].speed;
            let f = &mut world.hdvs[j];
            if let Some(phi) = f.last_phi {
                f.estimator.update(&Regressor { phi, target: v_now })?;
            }
        }

        let sp = world.safety(sc.cav_rho, limits.standstill);
        let gammas: Vec<GammaVector> = world.hdvs.iter().map(|h| h.estimator.gamma).collect();
        let ctrl = control_step(
            &Snapshot {
                pv: world.pv.as_ref(),
                platoon: &world.platoon,
                gammas: &gammas,
            },
            &cfg,
            &sp,
            &limits,
        )?;

        let mut inputs = Vec::with_capacity(world.platoon.len());
        inputs.push(ctrl.u);
        for j in 0..world.hdvs.len() {
            inputs.push(hdv_accel(&world, j, &limits));
        }
        let pv_u = match (&sc.pv, &world.pv) {
            (Some(script), Some(pv)) => Some(pv_accel(script, pv, t + tau, tau, &limits)),
            _ => None,
        };

        for j in 0..world.hdvs.len() {
            let me = world.platoon[j + 1];
            let lead = world.platoon[j];
            world.hdvs[j].last_phi = Some([me.speed, lead.position - me.position - l_c, lead.speed]);
        }

        let next_platoon: Vec<VehicleState> = world
            .platoon
            .iter()
            .zip(&inputs)
            .map(|(s, u)| euler_step(s, *u, tau, &limits))
            .collect();
        let next_pv = world.pv.as_ref().zip(pv_u).map(|(s, u)| euler_step(s, u, tau, &limits));
        // record the inputs actually applied
        let applied: Vec<f64> = next_platoon.iter().map(|s| s.accel).collect();
        let pv_applied = next_pv.map(|s| s.accel);

        let vehicles = record_vehicles(&world, pv_applied, &applied, sc, &sp);
        let residuals = platoon_residuals(&world.platoon, &sp, l_c);

        let d = &ctrl.diagnostics;
        ms_sum += d.solve_time_ms;
        metrics.controller_ms_max = metrics.controller_ms_max.max(d.solve_time_ms);
        match d.status {
            StepStatus::FailSafe => metrics.fail_safe_steps += 1,
            StepStatus::Degraded => metrics.degraded_steps += 1,
            StepStatus::Optimal => {}
        }
        if d.kkt_residual.is_finite() {
            metrics.max_kkt_residual = metrics.max_kkt_residual.max(d.kkt_residual);
        }
        for r in &vehicles {
            if r.state.speed < limits.v_min || r.state.speed > limits.v_max {
                metrics.speed_violations += 1;
            }
            if let Some(h) = r.headway {
                metrics.min_headway = Some(metrics.min_headway.map_or(h, |m| m.min(h)));
            }
            if r.kind == VehicleKind::Cav {
                if r.state.accel < limits.u_min || r.state.accel > limits.u_max {
                    metrics.input_violations += 1;
                }
                if let (Some(h), Some(s)) = (r.headway, r.safe_gap) {
                    let margin = h - s;
                    if margin < 0.0 {
                        metrics.cav_pv_violations += 1;
                    }
                    metrics.min_cav_pv_margin = Some(metrics.min_cav_pv_margin.map_or(margin, |m| m.min(margin)));
                }
            }
        }

        rows.push(StepRecord {
            step,
            t,
            vehicles,
            estimates: world
                .hdvs
                .iter()
                .enumerate()
                .map(|(j, h)| HdvEstimate {
                    id: j + 2,
                    gamma: h.estimator.gamma,
                })
                .collect(),
            diagnostics: ctrl.diagnostics,
            residuals,
        });

        world.platoon = next_platoon;
        world.pv = next_pv;
        check_collision(&world, t + tau, step + 1, l_c, rows.last())?;
    }

    if !rows.is_empty() {
        metrics.controller_ms_mean = ms_sum / rows.len() as f64;
    }
    Ok(RunResult {
        seed: sc.seed,
        scenario: sc.clone(),
        hdv_params,
        formation_time: detect_formation_time(&rows, &sc.platoon),
        rows,
        feasibility,
        feasibility_error,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LaneChange;
    use crate::sim::scenario::ScheduledLaneChange;

    fn short(n: usize, duration: f64) -> Scenario {
        Scenario {
            n_vehicles: n,
            duration,
            ..Scenario::default()
        }
    }

    #[test]
    fn flags_require_permanent_satisfaction() {
        let mk = |pattern: &[bool]| -> Vec<(f64, bool)> { pattern.iter().enumerate().map(|(i, b)| (i as f64, *b)).collect() };
        assert_eq!(formation_time_from_flags(&mk(&[false, true, true])), Some(1.0));
        assert_eq!(formation_time_from_flags(&mk(&[true, false, true, true])), Some(2.0));
        assert_eq!(formation_time_from_flags(&mk(&[true, true, false])), None);
        assert_eq!(formation_time_from_flags(&mk(&[true])), Some(0.0));
        assert_eq!(formation_time_from_flags(&[]), None);
    }

    #[test]
    fn equilibrium_pair_is_formed_at_start() {
        // OVM fixed point at v = v_d / 2 has headway equal to the safe gap
        let mut sc = short(2, 1.0);
        sc.hdv.perturbation = 0.0;
        sc.initial.cav_speed = 15.0;
        sc.initial.hdv_speed = 15.0;
        sc.initial.headway_factor = 1.0;
        let r = run(&sc).unwrap();
        assert_eq!(r.formation_time, Some(0.0));
        assert_eq!(r.rows.len(), 10);
    }

    #[test]
    fn zero_duration_gives_empty_trajectory() {
        let r = run(&short(5, 0.0)).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.formation_time, None);
    }

    #[test]
    fn perturbation_respects_bounds() {
        let sc = Scenario::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in sample_hdv_params(&sc, &mut rng, 200) {
            assert!((0.28..=0.52).contains(&p.alpha));
            assert!((0.14..=0.26).contains(&p.beta));
            assert!((1.26..=2.34).contains(&p.rho));
            assert!(p.desired_speed <= 35.0 && p.desired_speed >= 21.0);
        }
    }

    #[test]
    fn identical_seeds_identical_rows() {
        let sc = short(3, 2.0);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        let strip = |r: &RunResult| -> Vec<(Vec<VehicleRecord>, PlatoonResiduals)> {
            r.rows.iter().map(|s| (s.vehicles.clone(), s.residuals)).collect()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.hdv_params, b.hdv_params);
    }

    #[test]
    fn lane_changes_reindex_the_platoon() {
        let mut sc = short(5, 1.0);
        sc.lane_changes = vec![
            ScheduledLaneChange {
                time: 0.3,
                event: LaneChange::Departure { id: 3 },
            },
            ScheduledLaneChange {
                time: 0.6,
                event: LaneChange::Insertion { behind: 2 },
            },
        ];
        let r = run(&sc).unwrap();
        let ids = |k: usize| r.rows[k].vehicles.iter().map(|v| v.id).collect::<Vec<_>>();
        assert_eq!(ids(0), vec![1, 2, 3, 4, 5]);
        assert_eq!(ids(3), vec![1, 2, 3, 4]);
        assert_eq!(ids(6), vec![1, 2, 3, 4, 5]);
        let bad = Scenario {
            lane_changes: vec![ScheduledLaneChange {
                time: 0.0,
                event: LaneChange::Departure { id: 1 },
            }],
            ..short(3, 1.0)
        };
        assert!(matches!(run(&bad), Err(Error::InvalidEvent(_))));
    }

    #[test]
    fn collision_is_reported() {
        // followers far too close for their speed difference
        let mut sc = short(2, 5.0);
        sc.initial.hdv_speeds = Some(vec![35.0]);
        sc.initial.cav_speed = 0.0;
        sc.initial.headways = Some(vec![5.0]);
        sc.hdv.perturbation = 0.0;
        sc.hdv.rho = 0.05;
        match run(&sc) {
            Err(Error::CollisionDetected(rep)) => {
                assert_eq!((rep.lead_id, rep.follow_id), (1, 2));
                assert!(rep.headway < 0.0);
            }
            other => panic!("expected collision, got {:?}", other.map(|r| r.formation_time)),
        }
    }

    #[test]
    fn feasibility_check_needs_road_length() {
        let mut sc = short(3, 1.0);
        assert!(matches!(check_feasibility(&sc), Err(Error::Config(_))));
        sc.limits.road_length = Some(2000.0);
        let rep = check_feasibility(&sc).unwrap();
        assert!(rep.gap_surplus > 0.0);
        assert_eq!(run(&sc).unwrap().feasibility, Some(rep));
    }
}

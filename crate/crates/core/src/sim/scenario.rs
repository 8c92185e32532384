//! Scenario description, validation, TOML loading and dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{LaneChange, PlatoonCriteria, RoadLimits};
use crate::error::{Error, Result};
use crate::rhc::ControllerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Simulated time [s]; the step is `controller.tau`.
    pub duration: f64,
    /// Number of platoon vehicles `N` (CAV plus HDVs, PV excluded).
    pub n_vehicles: usize,
    pub limits: RoadLimits,
    pub initial: InitialConditions,
    pub hdv: HdvPopulation,
    pub controller: ControllerConfig,
    pub estimation: EstimationConfig,
    pub platoon: PlatoonCriteria,
    /// Safe time headway of the CAV with respect to the PV.
    pub cav_rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv: Option<PvScript>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lane_changes: Vec<ScheduledLaneChange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "custom".into(),
            seed: 1,
            duration: 40.0,
            n_vehicles: 5,
            limits: RoadLimits::default(),
            initial: InitialConditions::default(),
            hdv: HdvPopulation::default(),
            controller: ControllerConfig::default(),
            estimation: EstimationConfig::default(),
            platoon: PlatoonCriteria::default(),
            cav_rho: 1.5,
            pv: None,
            lane_changes: Vec::new(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub cav_speed: f64,
    pub hdv_speed: f64,
    /// Initial headway as a multiple of each follower's safe gap.
    pub headway_factor: f64,
    /// Per-HDV speeds, id 2 first; overrides `hdv_speed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hdv_speeds: Option<Vec<f64>>,
    /// Per-HDV headways [m], id 2 first; overrides `headway_factor`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub headways: Option<Vec<f64>>,
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions {
            cav_speed: 20.0,
            hdv_speed: 20.0,
            headway_factor: 1.5,
            hdv_speeds: None,
            headways: None,
        }
    }
}

/// Nominal OVM parameters and the uniform relative perturbation per HDV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdvPopulation {
    pub alpha: f64,
    pub beta: f64,
    pub desired_speed: f64,
    pub rho: f64,
    pub perturbation: f64,
}

impl Default for HdvPopulation {
    fn default() -> Self {
        HdvPopulation {
            alpha: 0.4,
            beta: 0.2,
            desired_speed: 30.0,
            rho: 1.8,
            perturbation: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub gamma0: [f64; 3],
    /// Initial covariance is `p0 · I`.
    pub p0: f64,
    pub forgetting: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            gamma0: [0.67, 0.1, 0.18],
            p0: 0.01,
            forgetting: 1.0,
        }
    }
}

/// Scripted preceding vehicle: piecewise-linear speed against time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvScript {
    /// Initial headway to the CAV as a multiple of the CAV safe gap.
    pub headway_factor: f64,
    /// `(t, v)` breakpoints with increasing `t`; held constant outside.
    pub profile: Vec<(f64, f64)>,
}

impl Default for PvScript {
    fn default() -> Self {
        PvScript {
            headway_factor: 1.5,
            profile: vec![(0.0, 20.0)],
        }
    }
}

impl PvScript {
    pub fn speed_at(&self, t: f64) -> f64 {
        let pts = &self.profile;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                if t1 == t0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledLaneChange {
    /// Applied at the first step with `t ≥ time`.
    pub time: f64,
    pub event: LaneChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    Beta,
    #[serde(alias = "v_d")]
    DesiredSpeed,
    Rho,
    #[serde(alias = "N")]
    N,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "v_d" | "desired_speed" => Ok(SweepAxis::DesiredSpeed),
            "rho" => Ok(SweepAxis::Rho),
            "N" | "n" | "n_vehicles" => Ok(SweepAxis::N),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected alpha, beta, v_d, rho or N)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::DesiredSpeed => "v_d",
            SweepAxis::Rho => "rho",
            SweepAxis::N => "N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn tau(&self) -> f64 {
        self.controller.tau
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.tau()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        self.controller.validate()?;
        self.platoon.validate()?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::param("duration", "must be finite and non-negative"));
        }
        if self.n_vehicles < 2 {
            return Err(Error::param("n_vehicles", "need the CAV and at least one HDV"));
        }
        if !(self.cav_rho > 0.0) {
            return Err(Error::param("cav_rho", "must be positive"));
        }
        let hdv = &self.hdv;
        if !(0.0..1.0).contains(&hdv.perturbation) {
            return Err(Error::param("hdv.perturbation", "must lie in [0, 1)"));
        }
        for (name, v) in [("hdv.alpha", hdv.alpha), ("hdv.beta", hdv.beta), ("hdv.rho", hdv.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !(hdv.desired_speed > self.limits.v_min && hdv.desired_speed <= self.limits.v_max) {
            return Err(Error::param("hdv.desired_speed", "must lie in (v_min, v_max]"));
        }
        let est = &self.estimation;
        if !(est.p0 > 0.0) || !(est.forgetting > 0.0 && est.forgetting <= 1.0) {
            return Err(Error::param("estimation", "p0 must be positive and forgetting in (0, 1]"));
        }
        let init = &self.initial;
        let in_range = |v: f64| v >= self.limits.v_min && v <= self.limits.v_max;
        if !in_range(init.cav_speed) || !in_range(init.hdv_speed) {
            return Err(Error::param("initial", "speeds must lie in [v_min, v_max]"));
        }
        if !(init.headway_factor >= 1.0) {
            return Err(Error::param("initial.headway_factor", "initial headways must be at least the safe gap"));
        }
        let n_hdv = self.n_vehicles - 1;
        if let Some(vs) = &init.hdv_speeds {
            if vs.len() != n_hdv || !vs.iter().all(|v| in_range(*v)) {
                return Err(Error::param("initial.hdv_speeds", format!("need {n_hdv} speeds in [v_min, v_max]")));
            }
        }
        if let Some(hs) = &init.headways {
            if hs.len() != n_hdv {
                return Err(Error::param("initial.headways", format!("need {n_hdv} headways")));
            }
        }
        if let Some(pv) = &self.pv {
            if pv.profile.is_empty() {
                return Err(Error::param("pv.profile", "needs at least one breakpoint"));
            }
            if pv.profile.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::param("pv.profile", "times must be non-decreasing"));
            }
            if !pv.profile.iter().all(|(_, v)| in_range(*v)) {
                return Err(Error::param("pv.profile", "speeds must lie in [v_min, v_max]"));
            }
            if !(pv.headway_factor >= 1.0) {
                return Err(Error::param("pv.headway_factor", "initial CAV headway must be at least the safe gap"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.axis == SweepAxis::N && sw.values.iter().any(|v| *v < 2.0 || v.fract() != 0.0) {
                return Err(Error::param("sweep.values", "N must be an integer of at least 2"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `key=value` overrides, where `key` is a dotted path into the
    /// scenario and `value` is a TOML literal (bare words are read as strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        let sc: Scenario = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not address a table field")))?;
    // integers are accepted where floats are expected
    let value = match (table.get(parts[parts.len() - 1]), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

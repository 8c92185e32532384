//! Named scenarios for the four experiment families.

use super::scenario::{EstimationConfig, PvScript, Scenario, SweepAxis, SweepSpec};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 4] = ["fig3-no-pv", "fig4-with-pv", "table3-scaling", "fig6-sensitivity"];

/// Five-vehicle platoon (CAV and four HDVs) without a preceding vehicle.
///
/// The estimators start from a diffuse covariance so the prior does not pin
/// the weakly excited directions of `γ̂`.
pub fn fig3_no_pv() -> Scenario {
    Scenario {
        name: "fig3-no-pv".into(),
        seed: 1,
        duration: 40.0,
        n_vehicles: 5,
        estimation: EstimationConfig {
            p0: 100.0,
            ..EstimationConfig::default()
        },
        ..Scenario::default()
    }
}

/// Same platoon behind a PV that brakes to a stop at full deceleration,
/// waits, then returns to its cruise speed at full acceleration.
pub fn fig4_with_pv() -> Scenario {
    Scenario {
        name: "fig4-with-pv".into(),
        duration: 60.0,
        pv: Some(PvScript {
            headway_factor: 1.5,
            profile: vec![(0.0, 20.0), (10.0, 20.0), (14.0, 0.0), (16.0, 0.0), (16.0 + 20.0 / 3.0, 20.0)],
        }),
        ..fig3_no_pv()
    }
}

/// Platoon sizes 3 to 8, five seeds each.
pub fn table3_scaling() -> Scenario {
    Scenario {
        name: "table3-scaling".into(),
        duration: 60.0,
        sweep: Some(SweepSpec {
            axis: SweepAxis::N,
            values: (3..=8).map(|n| n as f64).collect(),
            seeds: (1..=5).collect(),
        }),
        ..fig3_no_pv()
    }
}

/// Sensitivity of the formation time to the driver gain `alpha`.
pub fn fig6_sensitivity() -> Scenario {
    Scenario {
        name: "fig6-sensitivity".into(),
        duration: 60.0,
        sweep: Some(SweepSpec {
            axis: SweepAxis::Alpha,
            values: (1..=9).map(|k| 0.2 * k as f64).collect(),
            seeds: (1..=3).collect(),
        }),
        ..fig3_no_pv()
    }
}

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "fig3-no-pv" => Ok(fig3_no_pv()),
        "fig4-with-pv" => Ok(fig4_with_pv()),
        "table3-scaling" => Ok(table3_scaling()),
        "fig6-sensitivity" => Ok(fig6_sensitivity()),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

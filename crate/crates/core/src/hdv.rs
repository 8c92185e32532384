//! Car-following models: the nonlinear optimal velocity model that drives the
//! simulated human drivers, and the linear constant-time-headway /
//! relative-velocity model the controller uses for prediction.

use serde::{Deserialize, Serialize};

use crate::domain::{safe_gap, RoadLimits, VehicleState};
use crate::error::{Error, Result};

/// `|gamma_2|` below this cannot be inverted to a time headway.
pub const GAMMA2_THRESHOLD: f64 = 1e-8;

/// Optimal velocity model parameters of one driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    pub alpha: f64,
    pub beta: f64,
    pub desired_speed: f64,
    pub rho: f64,
    pub standstill: f64,
}

impl OvmParams {
    pub fn validate(&self, limits: &RoadLimits) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::param("hdv.alpha", "must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::param("hdv.beta", "must be positive"));
        }
        if !(self.desired_speed > limits.v_min && self.desired_speed <= limits.v_max) {
            return Err(Error::param(
                "hdv.desired_speed",
                format!("must lie in ({}, {}]", limits.v_min, limits.v_max),
            ));
        }
        if !(self.rho > 0.0) {
            return Err(Error::param("hdv.rho", "must be positive"));
        }
        Ok(())
    }

    /// Equilibrium speed-spacing function `V(delta, s)`.
    pub fn equilibrium_speed(&self, delta_tanh: f64, s: f64) -> f64 {
        0.5 * self.desired_speed * (delta_tanh + s.tanh())
    }
}

/// Unclamped OVM acceleration.
///
/// `dp = None` means there is no predecessor; the headway term then saturates
/// (`tanh(delta) = 1`).
pub fn ovm_accel(dp: Option<f64>, dv: f64, v: f64, p: &OvmParams) -> f64 {
    let s = safe_gap(v, p.rho, p.standstill);
    let (delta_tanh, dv) = match dp {
        Some(dp) => ((dp - s).tanh(), dv),
        None => (1.0, 0.0),
    };
    p.alpha * (p.equilibrium_speed(delta_tanh, s) - v) + p.beta * dv
}

/// Physical CTH-RV gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CthRvParams {
    pub eta: f64,
    pub nu: f64,
    pub rho: f64,
}

/// Regression coefficients of the discretised CTH-RV model,
/// `v(k+1) = g1 v(k) + g2 dp(k) + g3 v_lead(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaVector(pub [f64; 3]);

impl GammaVector {
    pub fn new(g1: f64, g2: f64, g3: f64) -> Self {
        GammaVector([g1, g2, g3])
    }

    pub fn g1(&self) -> f64 {
        self.0[0]
    }

    pub fn g2(&self) -> f64 {
        self.0[1]
    }

    pub fn g3(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, phi: &[f64; 3]) -> f64 {
        self.0[0] * phi[0] + self.0[1] * phi[1] + self.0[2] * phi[2]
    }

    pub fn distance(&self, other: &GammaVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// One-step CTH-RV speed prediction.
pub fn cthrv_next_speed(v: f64, dp: f64, v_lead: f64, gamma: &GammaVector) -> f64 {
    gamma.dot(&[v, dp, v_lead])
}

pub fn gamma_from_params(p: &CthRvParams, tau: f64) -> GammaVector {
    GammaVector::new(
        1.0 - (p.eta * p.rho + p.nu) * tau,
        p.eta * tau,
        p.nu * tau,
    )
}

pub fn params_from_gamma(g: &GammaVector, tau: f64) -> Result<CthRvParams> {
    if g.g2().abs() < GAMMA2_THRESHOLD {
        return Err(Error::DegenerateGamma(g.g2()));
    }
    Ok(CthRvParams {
        eta: g.g2() / tau,
        nu: g.g3() / tau,
        rho: (1.0 - g.g1() - g.g3()) / g.g2(),
    })
}

/// Advance one sampling period under the exact double-integrator update.
///
/// The input is first clamped to `[u_min, u_max]`; if the resulting speed
/// would leave `[v_min, v_max]` the input is replaced by the value that lands
/// exactly on the bound. The returned state carries the input actually applied.
pub fn euler_step(state: &VehicleState, u: f64, tau: f64, limits: &RoadLimits) -> VehicleState {
    let v = state.speed;
    let mut u = limits.clamp_accel(u);
    let mut v_next = v + u * tau;
    if v_next > limits.v_max {
        u = (limits.v_max - v) / tau;
        v_next = limits.v_max;
    } else if v_next < limits.v_min {
        u = (limits.v_min - v) / tau;
        v_next = limits.v_min;
    }
    VehicleState {
        position: state.position + v * tau + 0.5 * tau * tau * u,
        speed: v_next.clamp(limits.v_min, limits.v_max),
        accel: u,
    }
}

//! Condensed linear prediction of the CAV and its HDV followers.
//!
//! Every predicted position and speed over the horizon is stored as an affine
//! function `coeff · U + offset` of the CAV input sequence `U ∈ ℝ^H`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::domain::VehicleState;
use crate::error::{Error, Result};
use crate::hdv::GammaVector;

/// Affine sequence over steps `0..=H`; row `n` is the step-`n` value.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSeq {
    pub coeff: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineSeq {
    fn zeros(horizon: usize) -> Self {
        AffineSeq {
            coeff: DMatrix::zeros(horizon + 1, horizon),
            offset: DVector::zeros(horizon + 1),
        }
    }

    pub fn row(&self, n: usize) -> RowDVector<f64> {
        self.coeff.row(n).into_owned()
    }

    pub fn evaluate(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.coeff * u + &self.offset
    }

    /// `self[n+1] = Σ w_k · src_k[n]` plus a constant.
    fn set_combination(&mut self, n: usize, terms: &[(f64, &AffineSeq, usize)], constant: f64) {
        let h = self.coeff.ncols();
        let mut row = RowDVector::zeros(h);
        let mut off = constant;
        for &(w, src, m) in terms {
            if w != 0.0 {
                row += src.coeff.row(m) * w;
                off += w * src.offset[m];
            }
        }
        self.coeff.set_row(n + 1, &row);
        self.offset[n + 1] = off;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePrediction {
    pub position: AffineSeq,
    pub speed: AffineSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionChain {
    pub horizon: usize,
    pub tau: f64,
    pub cav: VehiclePrediction,
    /// Followers in platoon order (id 2 first).
    pub hdvs: Vec<VehiclePrediction>,
}

/// Predicted values of one vehicle for a concrete input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrack {
    pub position: DVector<f64>,
    pub speed: DVector<f64>,
}

/// Builds the chain from the current platoon (CAV first) and one γ̂ per HDV.
///
/// CAV: `p⁺ = p + τv + τ²u/2`, `v⁺ = v + τu`.
/// HDV `j`: `v⁺ = γ₁v_j + γ₂(p_{j-1} − p_j − l_c) + γ₃v_{j-1}`, `p⁺ = p_j + τv_j`,
/// with all right-hand values taken at the same step.
pub fn build_prediction_chain(
    platoon: &[VehicleState],
    gammas: &[GammaVector],
    l_c: f64,
    tau: f64,
    horizon: usize,
) -> Result<PredictionChain> {
    if horizon == 0 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    if platoon.is_empty() || gammas.len() + 1 != platoon.len() {
        return Err(Error::param(
            "gammas",
            format!("{} estimates for {} followers", gammas.len(), platoon.len().saturating_sub(1)),
        ));
    }
    let h = horizon;
    let mut cav = VehiclePrediction {
        position: AffineSeq::zeros(h),
        speed: AffineSeq::zeros(h),
    };
    cav.position.offset[0] = platoon[0].position;
    cav.speed.offset[0] = platoon[0].speed;
    for n in 0..h {
        let p = &mut cav.position;
        let mut row = p.coeff.row(n).into_owned();
        row += cav.speed.coeff.row(n) * tau;
        row[n] += 0.5 * tau * tau;
        p.coeff.set_row(n + 1, &row);
        p.offset[n + 1] = p.offset[n] + tau * cav.speed.offset[n];

        let v = &mut cav.speed;
        let mut row = v.coeff.row(n).into_owned();
        row[n] += tau;
        v.coeff.set_row(n + 1, &row);
        v.offset[n + 1] = v.offset[n];
    }

    let mut hdvs: Vec<VehiclePrediction> = Vec::with_capacity(gammas.len());
    for (j, g) in gammas.iter().enumerate() {
        let state = &platoon[j + 1];
        let mut pred = VehiclePrediction {
            position: AffineSeq::zeros(h),
            speed: AffineSeq::zeros(h),
        };
        pred.position.offset[0] = state.position;
        pred.speed.offset[0] = state.speed;
        let lead = if j == 0 { &cav } else { &hdvs[j - 1] };
        for n in 0..h {
            let (pos, spd) = (pred.position.clone(), pred.speed.clone());
            pred.speed.set_combination(
                n,
                &[
                    (g.g1(), &spd, n),
                    (g.g2(), &lead.position, n),
                    (-g.g2(), &pos, n),
                    (g.g3(), &lead.speed, n),
                ],
                -g.g2() * l_c,
            );
            pred.position.set_combination(n, &[(1.0, &pos, n), (tau, &spd, n)], 0.0);
        }
        hdvs.push(pred);
    }
    Ok(PredictionChain {
        horizon: h,
        tau,
        cav,
        hdvs,
    })
}

impl PredictionChain {
    pub fn n_hdv(&self) -> usize {
        self.hdvs.len()
    }

    /// Tracks for the CAV followed by every HDV.
    pub fn evaluate(&self, u: &DVector<f64>) -> Vec<PredictedTrack> {
        std::iter::once(&self.cav)
            .chain(self.hdvs.iter())
            .map(|v| PredictedTrack {
                position: v.position.evaluate(u),
                speed: v.speed.evaluate(u),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Step-by-step scalar propagation of the same model.
    fn scalar_sim(platoon: &[VehicleState], gammas: &[GammaVector], l_c: f64, tau: f64, u: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut p: Vec<f64> = platoon.iter().map(|s| s.position).collect();
        let mut v: Vec<f64> = platoon.iter().map(|s| s.speed).collect();
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = p.iter().zip(&v).map(|(a, b)| (vec![*a], vec![*b])).collect();
        for &uk in u {
            let mut pn = p.clone();
            let mut vn = v.clone();
            pn[0] = p[0] + tau * v[0] + 0.5 * tau * tau * uk;
            vn[0] = v[0] + tau * uk;
            for j in 1..p.len() {
                let g = gammas[j - 1];
                vn[j] = g.0[0] * v[j] + g.0[1] * (p[j - 1] - p[j] - l_c) + g.0[2] * v[j - 1];
                pn[j] = p[j] + tau * v[j];
            }
            p = pn;
            v = vn;
            for (i, o) in out.iter_mut().enumerate() {
                o.0.push(p[i]);
                o.1.push(v[i]);
            }
        }
        out
    }

    fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<VehicleState>, Vec<GammaVector>) {
        let mut pos = 0.0;
        let mut platoon = Vec::new();
        for _ in 0..n {
            platoon.push(VehicleState::new(pos, rng.gen_range(0.0..35.0)));
            pos -= rng.gen_range(8.0..60.0);
        }
        let gammas = (1..n)
            .map(|_| GammaVector::new(rng.gen_range(0.5..1.0), rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.3)))
            .collect();
        (platoon, gammas)
    }

    #[test]
    fn matches_scalar_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (platoon, gammas) = random_case(&mut rng, 3);
        let chain = build_prediction_chain(&platoon, &gammas, 5.0, 0.1, 3).unwrap();
        for _ in 0..20 {
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..3.0)).collect();
            let tracks = chain.evaluate(&DVector::from_vec(u.clone()));
            let oracle = scalar_sim(&platoon, &gammas, 5.0, 0.1, &u);
            for (t, o) in tracks.iter().zip(&oracle) {
                for n in 0..=3 {
                    assert!((t.position[n] - o.0[n]).abs() < 1e-10);
                    assert!((t.speed[n] - o.1[n]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn first_step_sensitivity() {
        let platoon = [VehicleState::new(0.0, 20.0), VehicleState::new(-40.0, 20.0)];
        let g = GammaVector::new(0.67, 0.1, 0.18);
        let chain = build_prediction_chain(&platoon, &[g], 5.0, 0.1, 2).unwrap();
        // the follower reacts to the leader's speed one step later
        assert_eq!(chain.hdvs[0].speed.coeff[(1, 0)], 0.0);
        assert!((chain.hdvs[0].speed.coeff[(2, 0)] - 0.18 * 0.1 - 0.1 * 0.005).abs() < 1e-15);
        assert!((chain.cav.position.coeff[(1, 0)] - 0.005).abs() < 1e-15);
        assert!((chain.cav.speed.coeff[(1, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identity_gamma_decouples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (platoon, _) = random_case(&mut rng, 4);
        let gammas = vec![GammaVector::new(1.0, 0.0, 0.0); 3];
        let chain = build_prediction_chain(&platoon, &gammas, 5.0, 0.1, 6).unwrap();
        for h in &chain.hdvs {
            assert!(h.speed.coeff.iter().all(|c| *c == 0.0));
            assert!(h.position.coeff.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn zero_input_is_open_loop_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (platoon, gammas) = random_case(&mut rng, 4);
        let chain = build_prediction_chain(&platoon, &gammas, 5.0, 0.1, 10).unwrap();
        let tracks = chain.evaluate(&DVector::zeros(10));
        assert_eq!(tracks[0].speed, DVector::from_element(11, platoon[0].speed));
        assert_eq!(tracks[2].position, chain.hdvs[1].position.offset);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let platoon = [VehicleState::new(0.0, 20.0), VehicleState::new(-40.0, 20.0)];
        assert!(build_prediction_chain(&platoon, &[], 5.0, 0.1, 2).is_err());
        assert!(build_prediction_chain(&platoon, &[GammaVector::new(1.0, 0.0, 0.0)], 5.0, 0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn superposition(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (platoon, gammas) = random_case(&mut rng, 4);
            let h = 8;
            let chain = build_prediction_chain(&platoon, &gammas, 5.0, 0.1, h).unwrap();
            let u = DVector::from_fn(h, |_, _| rng.gen_range(-5.0..3.0));
            let w = DVector::from_fn(h, |_, _| rng.gen_range(-5.0..3.0));
            let mix = chain.evaluate(&(&u * a + &w * b));
            let (cu, cw, c0) = (chain.evaluate(&u), chain.evaluate(&w), chain.evaluate(&DVector::zeros(h)));
            for i in 0..mix.len() {
                let expect = &cu[i].position * a + &cw[i].position * b + &c0[i].position * (1.0 - a - b);
                prop_assert!((&mix[i].position - expect).amax() < 1e-8);
                let expect = &cu[i].speed * a + &cw[i].speed * b + &c0[i].speed * (1.0 - a - b);
                prop_assert!((&mix[i].speed - expect).amax() < 1e-9);
            }
        }
    }
}

//! Online identification of CTH-RV coefficients.
//!
//! Each following HDV gets its own [`RlsEstimator`]. The estimator fits
//! `v_i(k+1) = gamma^T [v_i(k), dp_i(k), v_{i-1}(k)]` with exponential
//! forgetting; [`batch_ls`] solves the same weighted least-squares problem in
//! closed form and serves as a reference.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdv::GammaVector;

/// Smallest / largest Gram eigenvalue ratio treated as full rank.
const GRAM_RANK_TOL: f64 = 1e-12;

/// One regression sample: `phi = [v_i(k), dp_i(k), v_{i-1}(k)]`, `target = v_i(k+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub phi: [f64; 3],
    pub target: f64,
}

impl Regressor {
    pub fn new(v: f64, dp: f64, v_lead: f64, target: f64) -> Self {
        Regressor {
            phi: [v, dp, v_lead],
            target,
        }
    }

    fn is_finite(&self) -> bool {
        self.phi.iter().all(|x| x.is_finite()) && self.target.is_finite()
    }

    fn phi_vec(&self) -> Vector3<f64> {
        Vector3::from(self.phi)
    }
}

/// Recursive least squares estimator with forgetting factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsEstimator {
    pub gamma: GammaVector,
    pub covariance: Matrix3<f64>,
    pub forgetting: f64,
    pub updates: u64,
}

impl RlsEstimator {
    pub fn new(gamma0: GammaVector, covariance: Matrix3<f64>, forgetting: f64) -> Result<Self> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::param("estimation.forgetting", "must lie in (0, 1]"));
        }
        if covariance.cholesky().is_none() {
            return Err(Error::param(
                "estimation.p0",
                "initial covariance must be symmetric positive definite",
            ));
        }
        Ok(RlsEstimator {
            gamma: gamma0,
            covariance,
            forgetting,
            updates: 0,
        })
    }

    /// Estimator with `P(0) = p0 * I`.
    pub fn with_scaled_identity(gamma0: GammaVector, p0: f64, forgetting: f64) -> Result<Self> {
        Self::new(gamma0, Matrix3::identity() * p0, forgetting)
    }

    /// Prediction of the next speed with the current estimate.
    pub fn predict(&self, phi: &[f64; 3]) -> f64 {
        self.gamma.dot(phi)
    }

    /// Returns the estimator after absorbing `reg`.
    pub fn rls_update(&self, reg: &Regressor) -> Result<RlsEstimator> {
        let mut next = self.clone();
        next.update(reg)?;
        Ok(next)
    }

    /// In-place RLS step. On error the estimator is left unchanged.
    pub fn update(&mut self, reg: &Regressor) -> Result<()> {
        if !reg.is_finite() {
            return Err(Error::param("regressor", "non-finite sample"));
        }
        let phi = reg.phi_vec();
        let p = &self.covariance;
        let p_phi = p * phi;
        let denom = self.forgetting + phi.dot(&p_phi);
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::NumericalBreakdown(denom));
        }
        let innovation = reg.target - self.predict(&reg.phi);
        let gain = p_phi / denom;
        let gamma = Vector3::from(self.gamma.0) + gain * innovation;

        let mut p_next = (p - p_phi * p_phi.transpose() / denom) / self.forgetting;
        p_next = (p_next + p_next.transpose()) * 0.5;

        self.gamma = GammaVector([gamma[0], gamma[1], gamma[2]]);
        self.covariance = p_next;
        self.updates += 1;
        Ok(())
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance).eigenvalues.min()
    }
}

fn weighted_normal_equations(history: &[Regressor], forgetting: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let n = history.len();
    let mut gram = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (k, reg) in history.iter().enumerate() {
        let w = forgetting.powi((n - 1 - k) as i32);
        let phi = reg.phi_vec();
        gram += phi * phi.transpose() * w;
        rhs += phi * (reg.target * w);
    }
    (gram, rhs)
}

fn solve_gram(gram: Matrix3<f64>, rhs: Vector3<f64>) -> Result<GammaVector> {
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio > GRAM_RANK_TOL) {
        return Err(Error::SingularGram(ratio));
    }
    let chol = gram.cholesky().ok_or(Error::SingularGram(ratio))?;
    let g = chol.solve(&rhs);
    Ok(GammaVector([g[0], g[1], g[2]]))
}

/// Exact minimiser of `sum_k forgetting^(n-1-k) (target_k - gamma^T phi_k)^2`.
pub fn batch_ls(history: &[Regressor], forgetting: f64) -> Result<GammaVector> {
    if !(forgetting > 0.0 && forgetting <= 1.0) {
        return Err(Error::param("forgetting", "must lie in (0, 1]"));
    }
    let (gram, rhs) = weighted_normal_equations(history, forgetting);
    solve_gram(gram, rhs)
}

/// Weighted least squares regularised by the prior `(gamma0, P0)` an RLS
/// estimator starts from; the prior is discounted like the oldest sample.
/// After feeding `history` to `prior`, RLS produces this value up to rounding.
pub fn batch_ls_with_prior(history: &[Regressor], prior: &RlsEstimator) -> Result<GammaVector> {
    let xi = prior.forgetting;
    let (gram, rhs) = weighted_normal_equations(history, xi);
    let p0_inv = prior
        .covariance
        .try_inverse()
        .ok_or_else(|| Error::param("p0", "prior covariance is singular"))?;
    let decay = xi.powi(history.len() as i32);
    let gram = gram + p0_inv * decay;
    let rhs = rhs + p0_inv * Vector3::from(prior.gamma.0) * decay;
    solve_gram(gram, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdv::cthrv_next_speed;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_prior_init() -> RlsEstimator {
        RlsEstimator::with_scaled_identity(GammaVector::new(0.67, 0.1, 0.18), 0.01, 1.0).unwrap()
    }

    /// Noiseless CTH-RV follower behind a leader whose speed is redrawn every
    /// `hold` steps.
    fn follower_data(truth: &GammaVector, n: usize, seed: u64) -> Vec<Regressor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = 0.1;
        let (mut v, mut dp) = (20.0, 45.0);
        let mut v_lead: f64 = 20.0;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            if k % 15 == 0 {
                v_lead = rng.gen_range(2.0..33.0);
            }
            let next = cthrv_next_speed(v, dp, v_lead, truth);
            out.push(Regressor::new(v, dp, v_lead, next));
            dp += (v_lead - v) * tau;
            v = next;
        }
        out
    }

    #[test]
    fn zero_innovation_keeps_gamma() {
        let est = small_prior_init();
        let phi = [20.0, 33.0, 21.0];
        let reg = Regressor {
            phi,
            target: est.predict(&phi),
        };
        let next = est.rls_update(&reg).unwrap();
        assert_eq!(next.gamma, est.gamma);
        assert!(next.covariance != est.covariance);
        assert_eq!(next.updates, 1);
    }

    #[test]
    fn rls_matches_regularised_batch() {
        let truth = GammaVector::new(0.8, 0.1, 0.1);
        let data = follower_data(&truth, 200, 1);
        let mut est = small_prior_init();
        for reg in &data {
            est.update(reg).unwrap();
        }
        let oracle = batch_ls_with_prior(&data, &small_prior_init()).unwrap();
        assert!(est.gamma.distance(&oracle) < 1e-8);
    }

    #[test]
    fn small_prior_limits_accuracy_on_this_truth() {
        // With gamma* = (0.8, 0.1, 0.1) and tau = 0.1 the combination dp - v
        // obeys e(k+1) = 0.9 e(k) whatever the leader does, so that direction
        // is never re-excited and the 0.01*I prior is not washed out.
        let truth = GammaVector::new(0.8, 0.1, 0.1);
        let data = follower_data(&truth, 500, 2);
        for w in data.windows(2) {
            let e0 = w[0].phi[1] - w[0].phi[0];
            let e1 = w[1].phi[1] - w[1].phi[0];
            assert!((e1 - 0.9 * e0).abs() < 1e-9);
        }
        let mut est = small_prior_init();
        for reg in &data {
            est.update(reg).unwrap();
        }
        let oracle = batch_ls_with_prior(&data, &small_prior_init()).unwrap();
        assert!(est.gamma.distance(&oracle) < 1e-8);
        assert!(est.gamma.distance(&truth) > 1e-4);

        // a diffuse prior recovers the truth
        let mut diffuse = RlsEstimator::with_scaled_identity(GammaVector::new(0.67, 0.1, 0.18), 1e3, 1.0).unwrap();
        for reg in &data {
            diffuse.update(reg).unwrap();
        }
        assert!(diffuse.gamma.distance(&truth) < 1e-4);
    }

    #[test]
    fn rls_with_forgetting_matches_batch() {
        let truth = GammaVector::new(0.865, 0.05, 0.06);
        let data = follower_data(&truth, 300, 3);
        let prior = RlsEstimator::with_scaled_identity(GammaVector::new(0.67, 0.1, 0.18), 0.01, 0.98).unwrap();
        let mut est = prior.clone();
        for reg in &data {
            est.update(reg).unwrap();
            assert!(est.min_covariance_eigenvalue() > 0.0);
        }
        let oracle = batch_ls_with_prior(&data, &prior).unwrap();
        assert!(est.gamma.distance(&oracle) < 1e-6);
    }

    #[test]
    fn batch_interpolates_three_samples() {
        let truth = GammaVector::new(0.8, 0.1, 0.1);
        let pts = [[20.0, 30.0, 18.0], [15.0, 40.0, 25.0], [10.0, 12.0, 11.0]];
        let hist: Vec<_> = pts
            .iter()
            .map(|p| Regressor {
                phi: *p,
                target: truth.dot(p),
            })
            .collect();
        let g = batch_ls(&hist, 1.0).unwrap();
        assert!(g.distance(&truth) < 1e-12);
    }

    #[test]
    fn batch_rejects_identical_regressors() {
        let reg = Regressor::new(20.0, 33.0, 20.0, 20.0);
        assert!(matches!(batch_ls(&[reg; 10], 1.0), Err(Error::SingularGram(_))));
        assert!(matches!(batch_ls(&[], 1.0), Err(Error::SingularGram(_))));
    }

    #[test]
    fn batch_recovers_truth_from_trajectory() {
        let truth = GammaVector::new(0.8, 0.1, 0.1);
        let data = follower_data(&truth, 100, 4);
        let g = batch_ls(&data, 1.0).unwrap();
        assert!(g.distance(&truth) < 1e-9);
    }

    #[test]
    fn one_step_residual_trends_down() {
        let truth = GammaVector::new(0.865, 0.05, 0.06);
        let data = follower_data(&truth, 600, 5);
        let mut est = small_prior_init();
        let mut residuals = Vec::new();
        for reg in &data {
            residuals.push((reg.target - est.predict(&reg.phi)).abs());
            est.update(reg).unwrap();
        }
        let medians: Vec<f64> = residuals
            .chunks(100)
            .map(|w| {
                let mut w = w.to_vec();
                w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                w[w.len() / 2]
            })
            .collect();
        // least-squares slope of the window medians
        let k = medians.len() as f64;
        let mean_x = (k - 1.0) / 2.0;
        let mean_y = medians.iter().sum::<f64>() / k;
        let slope: f64 = medians
            .iter()
            .enumerate()
            .map(|(i, m)| (i as f64 - mean_x) * (m - mean_y))
            .sum();
        assert!(slope < 0.0, "{medians:?}");
        assert!(medians.iter().all(|m| *m <= medians[0]), "{medians:?}");
        assert!(medians.last().unwrap() < &(medians[0] * 0.5));
    }

    #[test]
    fn rejects_bad_configuration() {
        let g = GammaVector::new(0.67, 0.1, 0.18);
        assert!(RlsEstimator::with_scaled_identity(g, 0.01, 0.0).is_err());
        assert!(RlsEstimator::with_scaled_identity(g, 0.01, 1.2).is_err());
        assert!(RlsEstimator::with_scaled_identity(g, -1.0, 1.0).is_err());
        let est = small_prior_init();
        assert!(est
            .rls_update(&Regressor::new(f64::NAN, 1.0, 1.0, 1.0))
            .is_err());
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let truth = GammaVector::new(0.8, 0.1, 0.1);
        let mut est = small_prior_init();
        for reg in follower_data(&truth, 1000, 6) {
            est.update(&reg).unwrap();
            assert!(est.min_covariance_eigenvalue() > 0.0);
            let asym = (est.covariance - est.covariance.transpose()).abs().max();
            assert_eq!(asym, 0.0);
        }
        assert_relative_eq!(est.forgetting, 1.0);
    }
}

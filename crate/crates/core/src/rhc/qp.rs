//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min ½ xᵀGx + aᵀx` subject to `Cx ≥ b` and `lower ≤ x ≤ upper`.
//! The dual method starts from the unconstrained minimizer and adds the most
//! violated constraint each outer iteration, so every iterate is dual
//! feasible and the active set stays linearly independent.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("constraint set is infeasible (blocked at constraint {0})")]
    Infeasible(usize),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// Rows of `C` in `Cx ≥ b`.
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    /// `-inf` entries are ignored.
    pub lower: DVector<f64>,
    /// `+inf` entries are ignored.
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::Dimension(format!("Hessian is {}x{}, expected {n}x{n}", self.hessian.nrows(), self.hessian.ncols())));
        }
        if self.a_ineq.nrows() != self.b_ineq.len() || (self.a_ineq.nrows() > 0 && self.a_ineq.ncols() != n) {
            return Err(QpError::Dimension("inequality block".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("box bounds".into()));
        }
        Ok(())
    }

    /// Number of general rows plus finite bound rows.
    pub fn n_constraints(&self) -> usize {
        self.b_ineq.len()
            + self.lower.iter().filter(|l| l.is_finite()).count()
            + self.upper.iter().filter(|u| u.is_finite()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Primal feasibility tolerance on scaled rows.
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iterations: 500,
            feasibility_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    /// Iteration cap reached; `x` is the last dual-feasible iterate.
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// One multiplier per general row, then lower bounds, then upper bounds
    /// (zero for infinite bounds).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResidual,
}

/// Uniform row view over general rows and finite box bounds.
struct Rows<'a> {
    qp: &'a QpProblem,
    m_gen: usize,
}

impl<'a> Rows<'a> {
    fn total(&self) -> usize {
        self.m_gen + 2 * self.qp.dim()
    }

    fn enabled(&self, i: usize) -> bool {
        let n = self.qp.dim();
        if i < self.m_gen {
            true
        } else if i < self.m_gen + n {
            self.qp.lower[i - self.m_gen].is_finite()
        } else {
            self.qp.upper[i - self.m_gen - n].is_finite()
        }
    }

    fn row(&self, i: usize) -> DVector<f64> {
        let n = self.qp.dim();
        if i < self.m_gen {
            self.qp.a_ineq.row(i).transpose()
        } else if i < self.m_gen + n {
            let mut e = DVector::zeros(n);
            e[i - self.m_gen] = 1.0;
            e
        } else {
            let mut e = DVector::zeros(n);
            e[i - self.m_gen - n] = -1.0;
            e
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        let n = self.qp.dim();
        if i < self.m_gen {
            self.qp.b_ineq[i]
        } else if i < self.m_gen + n {
            self.qp.lower[i - self.m_gen]
        } else {
            -self.qp.upper[i - self.m_gen - n]
        }
    }

    /// `c_iᵀx - b_i`; non-negative when satisfied.
    fn slack(&self, i: usize, x: &DVector<f64>) -> f64 {
        let n = self.qp.dim();
        if i < self.m_gen {
            self.qp.a_ineq.row(i).dot(&x.transpose()) - self.qp.b_ineq[i]
        } else if i < self.m_gen + n {
            x[i - self.m_gen] - self.qp.lower[i - self.m_gen]
        } else {
            self.qp.upper[i - self.m_gen - n] - x[i - self.m_gen - n]
        }
    }

    fn norm(&self, i: usize) -> f64 {
        if i < self.m_gen {
            self.qp.a_ineq.row(i).norm()
        } else {
            1.0
        }
    }
}

struct ActiveSet {
    idx: Vec<usize>,
    /// Columns `G⁻¹ c_j` for active rows.
    ginv_n: Vec<DVector<f64>>,
    normals: Vec<DVector<f64>>,
    lambda: Vec<f64>,
}

impl ActiveSet {
    fn gram(&self) -> DMatrix<f64> {
        let q = self.idx.len();
        DMatrix::from_fn(q, q, |i, j| self.normals[i].dot(&self.ginv_n[j]))
    }

    fn remove(&mut self, k: usize) {
        self.idx.remove(k);
        self.ginv_n.remove(k);
        self.normals.remove(k);
        self.lambda.remove(k);
    }
}

pub fn solve_qp(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    qp.check()?;
    let n = qp.dim();
    let chol = Cholesky::new(qp.hessian.clone()).ok_or(QpError::NotConvex)?;
    let rows = Rows {
        qp,
        m_gen: qp.b_ineq.len(),
    };
    for i in 0..n {
        if qp.lower[i] > qp.upper[i] {
            return Err(QpError::Infeasible(rows.m_gen + i));
        }
    }

    let mut x = -chol.solve(&qp.gradient);
    let mut act = ActiveSet {
        idx: Vec::new(),
        ginv_n: Vec::new(),
        normals: Vec::new(),
        lambda: Vec::new(),
    };
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // most violated constraint, scaled by row norm
        let mut p = None;
        let mut worst = -settings.feasibility_tol;
        for i in 0..rows.total() {
            if !rows.enabled(i) || act.idx.contains(&i) {
                continue;
            }
            let nrm = rows.norm(i);
            if nrm == 0.0 {
                if rows.rhs(i) > settings.feasibility_tol {
                    return Err(QpError::Infeasible(i));
                }
                continue;
            }
            let s = rows.slack(i, &x) / nrm;
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };

        let n_p = rows.row(p);
        let ginv_np = chol.solve(&n_p);
        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                status = QpStatus::Degraded;
                break 'outer;
            }
            let q = act.idx.len();
            // r = M⁻¹ Nᵀ G⁻¹ n_p, z = G⁻¹ n_p - G⁻¹ N r
            let r = if q == 0 {
                DVector::zeros(0)
            } else {
                let m = act.gram();
                let rhs = DVector::from_fn(q, |j, _| act.ginv_n[j].dot(&n_p));
                match m.clone().lu().solve(&rhs) {
                    Some(r) => r,
                    None => return Err(QpError::Infeasible(p)),
                }
            };
            let mut z = ginv_np.clone();
            for j in 0..q {
                z.axpy(-r[j], &act.ginv_n[j], 1.0);
            }

            // partial step: largest t keeping active multipliers non-negative
            let mut t1 = f64::INFINITY;
            let mut k_drop = None;
            for j in 0..q {
                if r[j] > 1e-14 {
                    let t = act.lambda[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        k_drop = Some(j);
                    }
                }
            }
            // full step: makes constraint p active
            let zn = z.dot(&n_p);
            let z_zero = z.amax() <= 1e-14 * (1.0 + ginv_np.amax());
            let t2 = if z_zero || zn <= 0.0 {
                f64::INFINITY
            } else {
                -rows.slack(p, &x) / zn
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible(p));
            }

            for j in 0..q {
                act.lambda[j] -= t * r[j];
            }
            lambda_p += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                act.idx.push(p);
                act.ginv_n.push(ginv_np.clone());
                act.normals.push(n_p.clone());
                act.lambda.push(lambda_p);
                continue 'outer;
            }
            let k = k_drop.expect("finite t1 implies a blocking index");
            act.remove(k);
        }
    }

    // refine on the final active set: G x = Nλ - a, Nᵀx = b_A
    if status == QpStatus::Optimal && !act.idx.is_empty() {
        let q = act.idx.len();
        let m = act.gram();
        let ginv_a = chol.solve(&qp.gradient);
        let rhs = DVector::from_fn(q, |j, _| rows.rhs(act.idx[j]) + act.normals[j].dot(&ginv_a));
        if let Some(lam) = m.lu().solve(&rhs) {
            let mut xr = -ginv_a;
            for j in 0..q {
                xr.axpy(lam[j], &act.ginv_n[j], 1.0);
            }
            if lam.iter().all(|l| *l >= -1e-9) && xr.iter().all(|v| v.is_finite()) {
                x = xr;
                act.lambda = lam.iter().map(|l| l.max(0.0)).collect();
            }
        }
    }

    let mut multipliers = DVector::zeros(rows.total());
    for (j, &i) in act.idx.iter().enumerate() {
        multipliers[i] = act.lambda[j];
    }
    let kkt = kkt_residual(qp, &x, &multipliers);
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        multipliers,
        active: act.idx,
        status,
        iterations,
        kkt,
    })
}

/// Infinity-norm KKT residuals for `x` and multipliers ordered as in [`QpSolution`].
pub fn kkt_residual(qp: &QpProblem, x: &DVector<f64>, multipliers: &DVector<f64>) -> KktResidual {
    let rows = Rows {
        qp,
        m_gen: qp.b_ineq.len(),
    };
    let mut grad = &qp.hessian * x + &qp.gradient;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..rows.total() {
        if !rows.enabled(i) {
            continue;
        }
        let lam = multipliers[i];
        if lam != 0.0 {
            grad.axpy(-lam, &rows.row(i), 1.0);
        }
        let s = rows.slack(i, x);
        primal = primal.max(-s);
        comp = comp.max((lam * s).abs());
    }
    KktResidual {
        stationarity: grad.amax(),
        primal: primal.max(0.0),
        complementarity: comp,
    }
}

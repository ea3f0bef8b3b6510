//! Centralized box-constrained QP references.
//!
//! All three objectives are quadratics `g(q) = 1/2 q^T H q + h^T q` over the
//! VAR box:
//!
//! - `Weighted`: `1/2 (Xq - v)^T B (Xq - v) + 1/2 q^T C q`, so `H = X + C`, `h = -v`.
//! - `Unweighted`: `1/2 ||Xq - v||^2 + 1/2 q^T C q`, so `H = X^T X + C`, `h = -X^T v`.
//!   Pass `C = 0` for the plain voltage-mismatch problem.
//! - `BenchmarkScaledIdentity`: the weighted problem with `B` replaced by
//!   `lambda_bar I`, `lambda_bar` the mean eigenvalue of `B`.
//!
//! `v` is the voltage mismatch `mu - Vbar` the VARs have to make up.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::control::{project, VarLimits};
use crate::error::{check_len, Error, Result};
use crate::netmodel::{baseline_voltage, symmetrize, FeederNetwork, GraphMatrices};
use crate::stability::lambda_max_sym;
use crate::Real;

/// Projected-gradient iteration budget.
pub const MAX_ITER: usize = 500_000;
const POLISH_EVERY: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Unweighted,
    Weighted,
    BenchmarkScaledIdentity,
}

#[derive(Debug, Clone)]
pub struct QpProblem<T> {
    pub objective: Objective,
    pub x: DMatrix<T>,
    /// `mu - Vbar`.
    pub v_tilde: DVector<T>,
    pub c: DVector<T>,
    pub limits: VarLimits<T>,
    /// Mean eigenvalue of `B = X^-1` (used by the benchmark objective).
    pub lambda_bar: T,
    hessian: DMatrix<T>,
    linear: DVector<T>,
    step: T,
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Real"))]
pub struct QpSolution<T> {
    pub q: DVector<T>,
    /// `||q - P[q - s grad g(q)]||_inf` with `s = 1 / lambda_max(H)`.
    pub residual: T,
    pub iterations: usize,
}

impl<T: Real> QpProblem<T> {
    pub fn new(
        objective: Objective,
        x: DMatrix<T>,
        v_tilde: DVector<T>,
        c: DVector<T>,
        limits: VarLimits<T>,
    ) -> Result<Self> {
        let n = x.nrows();
        check_len("QpProblem(X columns)", n, x.ncols())?;
        check_len("QpProblem(v_tilde)", n, v_tilde.len())?;
        check_len("QpProblem(c)", n, c.len())?;
        check_len("QpProblem(limits)", n, limits.len())?;
        if c.iter().any(|&cj| !(cj >= T::zero())) {
            return Err(Error::Parameter("VAR penalty must be nonnegative".into()));
        }
        let x = symmetrize(&x);
        let b = x
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Contract("X must be positive definite".into()))?
            .inverse();
        let lambda_bar = b.trace() / T::lit(n as f64);

        let (mut hessian, linear) = match objective {
            Objective::Weighted => (x.clone(), -&v_tilde),
            Objective::Unweighted => (x.transpose() * &x, -(x.transpose() * &v_tilde)),
            Objective::BenchmarkScaledIdentity => (
                x.transpose() * &x * lambda_bar,
                -(x.transpose() * &v_tilde) * lambda_bar,
            ),
        };
        for j in 0..n {
            hessian[(j, j)] += c[j];
        }
        let hessian = symmetrize(&hessian);
        let step = T::one() / lambda_max_sym(&hessian)?;

        Ok(Self {
            objective,
            x,
            v_tilde,
            c,
            limits,
            lambda_bar,
            hessian,
            linear,
            step,
        })
    }

    /// Problem for the network's own loads, targets, limits and penalties.
    pub fn from_network(objective: Objective, net: &FeederNetwork<T>, gm: &GraphMatrices<T>) -> Result<Self> {
        let v_bar = baseline_voltage(gm, &net.p(), &net.qc(), net.v0())?;
        Self::new(
            objective,
            gm.x.clone(),
            net.mu() - v_bar,
            net.c(),
            VarLimits::from_network(net),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<T> {
        &self.hessian
    }

    pub fn gradient(&self, q: &DVector<T>) -> DVector<T> {
        &self.hessian * q + &self.linear
    }

    /// Objective value (up to the constant term).
    pub fn value(&self, q: &DVector<T>) -> T {
        (q.transpose() * &self.hessian * q)[(0, 0)] * T::lit(0.5) + self.linear.dot(q)
    }

    /// `||X q - v_tilde||`, i.e. `||V - mu||` under the linear model.
    pub fn voltage_mismatch(&self, q: &DVector<T>) -> T {
        (&self.x * q - &self.v_tilde).norm()
    }

    fn fixed_point_residual(&self, q: &DVector<T>, s: T) -> T {
        let trial = q - self.gradient(q) * s;
        (q - self.limits.project(&trial)).amax()
    }

    /// Solve the reduced KKT system with bound-active coordinates fixed at
    /// their bounds; `None` if the free solution leaves the box.
    fn polish(&self, q: &DVector<T>) -> Option<DVector<T>> {
        let g = self.gradient(q);
        let n = self.n();
        let lim = &self.limits;
        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let at_lo = q[j] <= lim.q_min[j] && g[j] >= T::zero();
                let at_hi = q[j] >= lim.q_max[j] && g[j] <= T::zero();
                !(at_lo || at_hi)
            })
            .collect();
        let mut out = q.clone();
        if free.is_empty() {
            return Some(out);
        }
        let k = free.len();
        let h_ff = DMatrix::from_fn(k, k, |a, b| self.hessian[(free[a], free[b])]);
        let rhs = DVector::from_fn(k, |a, _| {
            let i = free[a];
            let fixed: T = (0..n)
                .filter(|j| !free.contains(j))
                .fold(T::zero(), |acc, j| acc + self.hessian[(i, j)] * q[j]);
            -(self.linear[i] + fixed)
        });
        let sol = h_ff.cholesky()?.solve(&rhs);
        for (a, &i) in free.iter().enumerate() {
            if sol[a] < lim.q_min[i] || sol[a] > lim.q_max[i] {
                return None;
            }
            out[i] = sol[a];
        }
        Some(out)
    }
}

/// Minimizer starting from `q = P[0]`.
pub fn solve<T: Real>(prob: &QpProblem<T>, tol: T) -> Result<QpSolution<T>> {
    let start = prob.limits.project(&DVector::zeros(prob.n()));
    solve_from(prob, start, tol)
}

/// Projected gradient with the constant step `1 / lambda_max(H)`, with a periodic
/// active-set polish, until the fixed-point residual is at most `tol`.
pub fn solve_from<T: Real>(prob: &QpProblem<T>, start: DVector<T>, tol: T) -> Result<QpSolution<T>> {
    check_len("solve_from(start)", prob.n(), start.len())?;
    let s = prob.step;
    let mut q = prob.limits.project(&start);
    let mut residual = prob.fixed_point_residual(&q, s);
    for k in 0..MAX_ITER {
        if residual <= tol {
            return Ok(QpSolution {
                q,
                residual,
                iterations: k,
            });
        }
        q = prob.limits.project(&(&q - prob.gradient(&q) * s));
        if k % POLISH_EVERY == POLISH_EVERY - 1 {
            if let Some(candidate) = prob.polish(&q) {
                let r = prob.fixed_point_residual(&candidate, s);
                if r <= tol {
                    return Ok(QpSolution {
                        q: candidate,
                        residual: r,
                        iterations: k + 1,
                    });
                }
            }
        }
        residual = prob.fixed_point_residual(&q, s);
    }
    if residual <= tol {
        return Ok(QpSolution {
            q,
            residual,
            iterations: MAX_ITER,
        });
    }
    Err(Error::NotConverged {
        iterations: MAX_ITER,
        residual: residual.as_f64(),
    })
}

/// `||q - P[q - grad g(q)]||_inf`: zero exactly at the optimum.
pub fn kkt_residual<T: Real>(prob: &QpProblem<T>, q: &DVector<T>) -> Result<T> {
    check_len("kkt_residual", prob.n(), q.len())?;
    if !prob.limits.contains(q) {
        return Err(Error::Contract("kkt_residual needs a feasible q".into()));
    }
    let g = prob.gradient(q);
    Ok((q - project(&(q - g), &prob.limits.q_min, &prob.limits.q_max)).amax())
}

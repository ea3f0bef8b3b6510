//! Eigenvalue stability certificates for the local control loop.
//!
//! Under the linear plant, the scaled error `D^-1/2 (q(t) - q*)` contracts when
//! `lambda_max(H) < 2 / alpha`, with `H = D^1/2 (X + C) D^1/2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::control::{ControlConfig, Scheme};
use crate::error::{check_len, Error, Result};
use crate::netmodel::{symmetrize, GraphMatrices};
use crate::Real;

/// Half-width of the band around the stability threshold that is reported unstable.
pub const MARGINAL_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    pub scheme: Scheme,
    pub lambda_max_h: T,
    pub stable: bool,
    /// Largest admissible `epsilon` for scaled control with this `C` (strict bound).
    pub epsilon_bound: T,
    /// `2 / lambda_max(H)`: largest relaxation weight that keeps this `D` stable.
    pub alpha_bound: T,
    /// Supremum of the configured relaxation schedule.
    pub alpha_sup: T,
    /// Whether `C^-1 - X` is positive definite (droop only).
    pub droop_pd_ok: Option<bool>,
}

/// `D^1/2 (X + C) D^1/2` for diagonal `D` and `C`.
pub fn h_matrix<T: Real>(d: &DVector<T>, x: &DMatrix<T>, c: &DVector<T>) -> Result<DMatrix<T>> {
    let n = x.nrows();
    check_len("h_matrix(X columns)", n, x.ncols())?;
    check_len("h_matrix(d)", n, d.len())?;
    check_len("h_matrix(c)", n, c.len())?;
    if let Some(j) = d.iter().position(|&dj| !(dj > T::zero())) {
        return Err(Error::Contract(format!("stepsize d must be positive (index {j})")));
    }
    let sqrt_d = d.map(|dj| dj.sqrt());
    let mut h = x.clone();
    for j in 0..n {
        h[(j, j)] += c[j];
    }
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] *= sqrt_d[i] * sqrt_d[j];
        }
    }
    Ok(symmetrize(&h))
}

/// Largest eigenvalue of a symmetric matrix (full symmetric eigendecomposition).
pub fn lambda_max_sym<T: Real>(a: &DMatrix<T>) -> Result<T> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Contract("lambda_max_sym needs a nonempty square matrix".into()));
    }
    let scale = a.amax().max(T::one());
    let asym = (a - a.transpose()).amax();
    if asym > T::lit(1e-9) * scale {
        return Err(Error::Contract(format!(
            "matrix is not symmetric (max |A - A^T| = {asym})"
        )));
    }
    let eig = symmetrize(a).symmetric_eigen();
    Ok(eig.eigenvalues.max())
}

/// Strict upper bound on `epsilon` for `D = epsilon [diag(X + C)]^-1`.
pub fn scaled_epsilon_bound<T: Real>(x: &DMatrix<T>, c: &DVector<T>) -> Result<T> {
    let d_h = hessian_diagonal_inverse(x, c)?;
    Ok(T::lit(2.0) / lambda_max_sym(&h_matrix(&d_h, x, c)?)?)
}

/// `[diag(X + C)]^-1`.
pub fn hessian_diagonal_inverse<T: Real>(x: &DMatrix<T>, c: &DVector<T>) -> Result<DVector<T>> {
    let n = x.nrows();
    check_len("hessian_diagonal_inverse(c)", n, c.len())?;
    let d = DVector::from_iterator(n, (0..n).map(|j| T::one() / (x[(j, j)] + c[j])));
    if d.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
        return Err(Error::Contract("diag(X + C) must be positive".into()));
    }
    Ok(d)
}

/// Stability certificate of a controller on a network.
pub fn analyze<T: Real>(cfg: &ControlConfig<T>, gm: &GraphMatrices<T>) -> Result<StabilityReport<T>> {
    check_len("analyze", gm.n(), cfg.n())?;
    if cfg.scheme == Scheme::Droop {
        if let Some(j) = cfg.c.iter().position(|&c| !(c > T::zero())) {
            return Err(Error::Config(format!("droop control needs c > 0 (bus {})", j + 1)));
        }
    }
    let lambda = lambda_max_sym(&h_matrix(&cfg.d, &gm.x, &cfg.c)?)?;
    let two = T::lit(2.0);
    let alpha_sup = cfg.alpha.sup();
    let threshold = two / alpha_sup;
    let stable = lambda < threshold - T::lit(MARGINAL_BAND);

    let droop_pd_ok = (cfg.scheme == Scheme::Droop).then(|| {
        let mut m = -gm.x.clone();
        for j in 0..cfg.n() {
            m[(j, j)] += T::one() / cfg.c[j];
        }
        symmetrize(&m).cholesky().is_some()
    });

    Ok(StabilityReport {
        scheme: cfg.scheme,
        lambda_max_h: lambda,
        stable,
        epsilon_bound: scaled_epsilon_bound(&gm.x, &cfg.c)?,
        alpha_bound: two / lambda,
        alpha_sup,
        droop_pd_ok,
    })
}

//! Linear (LinDistFlow) and full AC power flow.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::netmodel::{baseline_voltage, FeederNetwork, GraphMatrices};
use crate::Real;

/// Iteration cap of the AC solver.
pub const AC_MAX_ITER: usize = 100;
/// Power mismatch tolerance of the AC solver (p.u.).
pub const AC_TOL: f64 = 1e-8;

/// Linearized voltage magnitudes of the non-slack buses for net injections
/// `p` and `q` (`q` = inverter VARs minus load VARs).
pub fn solve_lindistflow<T: Real>(gm: &GraphMatrices<T>, p: &DVector<T>, q: &DVector<T>, v0: T) -> Result<DVector<T>> {
    let zero = DVector::zeros(gm.n());
    check_len("solve_lindistflow(q)", gm.n(), q.len())?;
    Ok(baseline_voltage(gm, p, &zero, v0)? + &gm.x * q)
}

#[derive(Debug, Clone, Serialize)]
pub struct AcSolution<T> {
    /// Voltage magnitudes of all `N+1` buses, slack first.
    pub v_mag: Vec<T>,
    /// Voltage angles in radians, slack first.
    pub v_ang: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest complex power mismatch over the non-slack buses.
    pub max_mismatch: T,
}

impl<T: Real> AcSolution<T> {
    /// Magnitudes of the non-slack buses.
    pub fn load_bus_magnitudes(&self) -> DVector<T> {
        DVector::from_column_slice(&self.v_mag[1..])
    }
}

/// Bus admittance matrix of the series-impedance network.
pub fn admittance_matrix<T: Real>(net: &FeederNetwork<T>) -> DMatrix<Complex<T>> {
    let n_bus = net.n() + 1;
    let mut y = DMatrix::from_element(n_bus, n_bus, Complex::new(T::zero(), T::zero()));
    for line in net.lines() {
        let y_line = Complex::new(T::one(), T::zero()) / Complex::new(line.r, line.x);
        y[(line.from, line.from)] += y_line;
        y[(line.to, line.to)] += y_line;
        y[(line.from, line.to)] -= y_line;
        y[(line.to, line.from)] -= y_line;
    }
    y
}

/// Full AC power flow with the slack bus held at `v0 /_ 0`.
///
/// Implicit Z-bus fixed point from a flat start:
/// `V <- Yrr^-1 (conj(S / V) - Yr0 v0)`, stopping once every non-slack bus
/// satisfies `|V conj(Y V) - S| <= 1e-8`. Non-convergence within 100 sweeps is
/// reported through `converged = false`, not as an error.
pub fn solve_acpf<T: Real>(net: &FeederNetwork<T>, p: &DVector<T>, q: &DVector<T>, v0: T) -> Result<AcSolution<T>> {
    let n = net.n();
    check_len("solve_acpf(p)", n, p.len())?;
    check_len("solve_acpf(q)", n, q.len())?;

    let y = admittance_matrix(net);
    let y_rr = y.view((1, 1), (n, n)).into_owned();
    let y_r0 = y.view((1, 0), (n, 1)).column(0).into_owned();
    let lu = y_rr.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Topology("reduced admittance matrix is singular".into()));
    }

    let s: DVector<Complex<T>> = DVector::from_iterator(n, (0..n).map(|k| Complex::new(p[k], q[k])));
    let v_slack = Complex::new(v0, T::zero());
    let slack_current = &y_r0 * v_slack;
    let tol = T::lit(AC_TOL);

    let mut v = DVector::from_element(n, v_slack);
    let mut mismatch = T::max_value().unwrap_or_else(T::one);
    let mut iterations = 0;
    let mut converged = false;
    for k in 1..=AC_MAX_ITER {
        iterations = k;
        let injected = DVector::from_iterator(n, (0..n).map(|i| (s[i] / v[i]).conj()));
        let rhs = injected - &slack_current;
        v = match lu.solve(&rhs) {
            Some(v) => v,
            None => return Err(Error::Topology("reduced admittance matrix is singular".into())),
        };
        let current = &y_rr * &v + &slack_current;
        mismatch = (0..n)
            .map(|i| (v[i] * current[i].conj() - s[i]).modulus())
            .fold(T::zero(), |a, b| if b > a || !b.is_finite() { b } else { a });
        if !mismatch.is_finite() || v.iter().any(|vi| !vi.re.is_finite() || !vi.im.is_finite()) {
            break;
        }
        if mismatch <= tol {
            converged = true;
            break;
        }
    }

    let mut v_mag = Vec::with_capacity(n + 1);
    let mut v_ang = Vec::with_capacity(n + 1);
    v_mag.push(v0);
    v_ang.push(T::zero());
    for vi in v.iter() {
        v_mag.push(vi.modulus());
        v_ang.push(vi.argument());
    }
    Ok(AcSolution {
        v_mag,
        v_ang,
        converged,
        iterations,
        max_mismatch: mismatch,
    })
}

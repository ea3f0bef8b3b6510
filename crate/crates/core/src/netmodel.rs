//! Feeder graph and the graph matrices behind the LinDistFlow model.
//!
//! With `M0` the `(N+1) x L` incidence matrix (`+1` at the end closer to the
//! feeder head, `-1` at the far end), `m0` its slack row and `M` the rest, the
//! linearized voltages of the non-slack buses are
//!
//! ```text
//! V = R p + X q + v0 * w,   R = M^-T Dr M^-1,   X = M^-T Dx M^-1,   w = -M^-T m0 = 1
//! ```
//!
//! and `B = X^-1 = M Dx^-1 M^T` is the reactance-weighted graph Laplacian with the
//! slack row and column removed. For meshed graphs `M` is not square, so `X` and
//! `R` are obtained by inverting the reduced Laplacians instead.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::Real;

/// Per-unit bases the network was converted with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerUnitBase {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
}

impl PerUnitBase {
    pub fn impedance_ohm(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.s_base_mva
    }

    pub fn power_kva(&self) -> f64 {
        self.s_base_mva * 1000.0
    }
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_base_mva: 1.0,
            v_base_kv: 12.0,
        }
    }
}

/// A bus with its injections and VAR control data, all in per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus<T> {
    pub id: usize,
    /// Real power injection (negative for load).
    pub p: T,
    /// Reactive power consumed by the load.
    pub qc: T,
    pub q_min: T,
    pub q_max: T,
    /// VAR supply penalty coefficient.
    pub c: T,
    /// Target voltage magnitude.
    pub mu: T,
}

impl<T: Real> Bus<T> {
    /// A bus with no load, no VAR capability, zero penalty and unit target.
    pub fn new(id: usize) -> Self {
        Self {
            id,
            p: T::zero(),
            qc: T::zero(),
            q_min: T::zero(),
            q_max: T::zero(),
            c: T::zero(),
            mu: T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
}

impl<T> Line<T> {
    pub fn new(from: usize, to: usize, r: T, x: T) -> Self {
        Self { from, to, r, x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Radial,
    Meshed,
}

/// Validated feeder graph. Bus 0 is the slack bus (point of common coupling).
#[derive(Debug, Clone)]
pub struct FeederNetwork<T> {
    buses: Vec<Bus<T>>,
    lines: Vec<Line<T>>,
    v0: T,
    base: PerUnitBase,
    topology: Topology,
    depth: Vec<usize>,
}

impl<T: Real> FeederNetwork<T> {
    /// Builds a network from buses indexed `0..=N` (in order) and lines.
    pub fn new(buses: Vec<Bus<T>>, lines: Vec<Line<T>>, v0: T) -> Result<Self> {
        Self::with_base(buses, lines, v0, PerUnitBase::default())
    }

    pub fn with_base(buses: Vec<Bus<T>>, lines: Vec<Line<T>>, v0: T, base: PerUnitBase) -> Result<Self> {
        if buses.len() < 2 {
            return Err(Error::Topology(
                "a feeder needs the slack bus and at least one more bus".into(),
            ));
        }
        if !(v0 > T::zero()) {
            return Err(Error::Parameter(format!("slack voltage must be positive, got {v0}")));
        }
        for (k, bus) in buses.iter().enumerate() {
            if bus.id != k {
                return Err(Error::Parameter(format!(
                    "bus ids must be 0..N in order; position {k} holds id {}",
                    bus.id
                )));
            }
            if !(bus.q_min <= bus.q_max) {
                return Err(Error::Parameter(format!("bus {k}: q_min > q_max")));
            }
            if !(bus.c >= T::zero()) {
                return Err(Error::Parameter(format!("bus {k}: negative VAR penalty c")));
            }
            if !(bus.mu > T::zero()) {
                return Err(Error::Parameter(format!("bus {k}: target voltage mu must be positive")));
            }
        }
        let n_bus = buses.len();
        for (l, line) in lines.iter().enumerate() {
            if line.from >= n_bus || line.to >= n_bus {
                return Err(Error::Topology(format!(
                    "line {l} references a bus outside 0..{}",
                    n_bus - 1
                )));
            }
            if line.from == line.to {
                return Err(Error::Topology(format!("line {l} is a self-loop at bus {}", line.from)));
            }
            if !(line.x > T::zero()) {
                return Err(Error::Parameter(format!(
                    "line {l} ({}-{}): reactance must be strictly positive",
                    line.from, line.to
                )));
            }
            if !(line.r >= T::zero()) {
                return Err(Error::Parameter(format!(
                    "line {l} ({}-{}): negative resistance",
                    line.from, line.to
                )));
            }
        }

        let depth = bfs_depth(n_bus, &lines)
            .ok_or_else(|| Error::Topology("network is not connected to the slack bus".into()))?;
        let topology = if lines.len() == n_bus - 1 {
            Topology::Radial
        } else {
            Topology::Meshed
        };

        Ok(Self {
            buses,
            lines,
            v0,
            base,
            topology,
            depth,
        })
    }

    /// Number of non-slack buses `N`.
    pub fn n(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn buses(&self) -> &[Bus<T>] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line<T>] {
        &self.lines
    }

    pub fn v0(&self) -> T {
        self.v0
    }

    pub fn base(&self) -> PerUnitBase {
        self.base
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Hop distance of each bus from the slack bus.
    pub fn depth(&self) -> &[usize] {
        &self.depth
    }

    fn collect(&self, f: impl Fn(&Bus<T>) -> T) -> DVector<T> {
        DVector::from_iterator(self.n(), self.buses[1..].iter().map(f))
    }

    pub fn p(&self) -> DVector<T> {
        self.collect(|b| b.p)
    }

    pub fn qc(&self) -> DVector<T> {
        self.collect(|b| b.qc)
    }

    pub fn q_min(&self) -> DVector<T> {
        self.collect(|b| b.q_min)
    }

    pub fn q_max(&self) -> DVector<T> {
        self.collect(|b| b.q_max)
    }

    pub fn c(&self) -> DVector<T> {
        self.collect(|b| b.c)
    }

    pub fn mu(&self) -> DVector<T> {
        self.collect(|b| b.mu)
    }

    /// Same network with every non-slack penalty set to `c`.
    pub fn with_uniform_penalty(mut self, c: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return Err(Error::Parameter("VAR penalty must be nonnegative".into()));
        }
        for bus in &mut self.buses[1..] {
            bus.c = c;
        }
        Ok(self)
    }

    /// Same network with non-slack injections replaced. Lengths must equal `N`.
    pub fn with_injections(mut self, p: &DVector<T>, qc: &DVector<T>) -> Result<Self> {
        check_len("with_injections(p)", self.n(), p.len())?;
        check_len("with_injections(qc)", self.n(), qc.len())?;
        for (k, bus) in self.buses[1..].iter_mut().enumerate() {
            bus.p = p[k];
            bus.qc = qc[k];
        }
        Ok(self)
    }
}

fn bfs_depth<T>(n_bus: usize, lines: &[Line<T>]) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); n_bus];
    for line in lines {
        adj[line.from].push(line.to);
        adj[line.to].push(line.from);
    }
    let mut depth = vec![usize::MAX; n_bus];
    depth[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                queue.push_back(j);
            }
        }
    }
    depth.iter().all(|&d| d != usize::MAX).then_some(depth)
}

/// Incidence matrix split and diagonal line parameters.
#[derive(Debug, Clone)]
pub struct Incidence<T> {
    /// Full `(N+1) x L` incidence matrix.
    pub m0_full: DMatrix<T>,
    /// Slack row of the incidence matrix (length `L`).
    pub m0: DVector<T>,
    /// Remaining `N x L` block.
    pub m: DMatrix<T>,
    /// Diagonal of `Dr`.
    pub dr: DVector<T>,
    /// Diagonal of `Dx`.
    pub dx: DVector<T>,
    pub topology: Topology,
}

impl<T: Real> Incidence<T> {
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_lines(&self) -> usize {
        self.m.ncols()
    }

    /// `M diag(w)^-1 M^T` for a vector of positive line weights.
    fn reduced_laplacian(&self, weights: &DVector<T>) -> DMatrix<T> {
        let mut scaled = self.m.clone();
        for (l, mut col) in scaled.column_iter_mut().enumerate() {
            col /= weights[l];
        }
        symmetrize(&(&scaled * self.m.transpose()))
    }
}

/// Builds the incidence matrix. Radial lines are oriented away from the slack
/// bus; in meshed networks every line is oriented `from -> to`.
pub fn build_incidence<T: Real>(net: &FeederNetwork<T>) -> Incidence<T> {
    let n_bus = net.buses.len();
    let n_lines = net.lines.len();
    let mut m0_full = DMatrix::zeros(n_bus, n_lines);
    for (l, line) in net.lines.iter().enumerate() {
        let (head, tail) = match net.topology {
            Topology::Radial if net.depth[line.to] < net.depth[line.from] => (line.to, line.from),
            _ => (line.from, line.to),
        };
        m0_full[(head, l)] = T::one();
        m0_full[(tail, l)] = -T::one();
    }
    let m0 = m0_full.row(0).transpose();
    let m = m0_full.rows(1, n_bus - 1).into_owned();
    Incidence {
        m0_full,
        m0,
        m,
        dr: DVector::from_iterator(n_lines, net.lines.iter().map(|l| l.r)),
        dx: DVector::from_iterator(n_lines, net.lines.iter().map(|l| l.x)),
        topology: net.topology,
    }
}

/// Which algebraic route produces `R` and `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityRoute {
    /// Radial: invert the square `M`. Meshed: invert the reduced Laplacians.
    Auto,
    /// Always invert the reduced Laplacians, even for radial feeders.
    Laplacian,
}

/// Incidence data plus the LinDistFlow sensitivities. Immutable once built.
#[derive(Debug, Clone)]
pub struct GraphMatrices<T> {
    pub incidence: Incidence<T>,
    /// Voltage sensitivity to real power injections.
    pub r: DMatrix<T>,
    /// Voltage sensitivity to reactive power injections.
    pub x: DMatrix<T>,
    /// `X^-1`, the reduced reactance-weighted Laplacian (Bbus).
    pub b: DMatrix<T>,
    /// Voltage response to a unit slack voltage (`-M^-T m0`, all ones when connected).
    pub slack_coupling: DVector<T>,
}

impl<T: Real> GraphMatrices<T> {
    pub fn from_network(net: &FeederNetwork<T>) -> Result<Self> {
        compute_sensitivities(build_incidence(net))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

pub fn compute_sensitivities<T: Real>(inc: Incidence<T>) -> Result<GraphMatrices<T>> {
    compute_sensitivities_with(inc, SensitivityRoute::Auto)
}

pub fn compute_sensitivities_with<T: Real>(inc: Incidence<T>, route: SensitivityRoute) -> Result<GraphMatrices<T>> {
    let n = inc.n();
    if inc.n_lines() < n {
        return Err(Error::Topology(format!(
            "{} lines cannot connect {} non-slack buses",
            inc.n_lines(),
            n
        )));
    }
    if let Some(l) = inc.dx.iter().position(|&x| !(x > T::zero())) {
        return Err(Error::Parameter(format!("line {l} has nonpositive reactance")));
    }
    let b = inc.reduced_laplacian(&inc.dx);
    let coupling_x = incidence_coupling(&inc, &inc.dx);

    let use_incidence_inverse = route == SensitivityRoute::Auto && inc.topology == Topology::Radial;
    let (r, x, slack_coupling) = if use_incidence_inverse {
        let m_inv = inc
            .m
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Topology("incidence matrix M is singular".into()))?;
        let x = congruence(&m_inv, &inc.dx);
        let r = congruence(&m_inv, &inc.dr);
        let w = -(m_inv.transpose() * &inc.m0);
        (r, x, w)
    } else {
        let x = spd_inverse(&b, "reduced reactance Laplacian")?;
        let r = if inc.dr.iter().all(|&r| r > T::zero()) {
            let br = inc.reduced_laplacian(&inc.dr);
            spd_inverse(&br, "reduced resistance Laplacian")?
        } else if inc.dr.iter().all(|&r| r == T::zero()) {
            DMatrix::zeros(n, n)
        } else {
            return Err(Error::Parameter(
                "meshed sensitivities need all resistances positive (or all zero)".into(),
            ));
        };
        let w = -(&x * coupling_x);
        (r, x, w)
    };

    Ok(GraphMatrices {
        incidence: inc,
        r,
        x,
        b,
        slack_coupling,
    })
}

/// `M Dw^-1 m0`, the slack column of the weighted Laplacian restricted to non-slack rows.
fn incidence_coupling<T: Real>(inc: &Incidence<T>, weights: &DVector<T>) -> DVector<T> {
    let scaled_m0 = inc.m0.component_div(weights);
    &inc.m * scaled_m0
}

/// `A^T diag(d) A`, symmetrized.
fn congruence<T: Real>(a: &DMatrix<T>, d: &DVector<T>) -> DMatrix<T> {
    let mut da = a.clone();
    for (i, mut row) in da.row_iter_mut().enumerate() {
        row *= d[i];
    }
    symmetrize(&(a.transpose() * da))
}

fn spd_inverse<T: Real>(a: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Topology(format!("{what} is singular (network disconnected?)")))?;
    Ok(symmetrize(&chol.inverse()))
}

pub(crate) fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

/// No-VAR-support voltage profile `V = R p - X qc + v0 w`.
pub fn baseline_voltage<T: Real>(gm: &GraphMatrices<T>, p: &DVector<T>, qc: &DVector<T>, v0: T) -> Result<DVector<T>> {
    check_len("baseline_voltage(p)", gm.n(), p.len())?;
    check_len("baseline_voltage(qc)", gm.n(), qc.len())?;
    Ok(&gm.r * p - &gm.x * qc + &gm.slack_coupling * v0)
}

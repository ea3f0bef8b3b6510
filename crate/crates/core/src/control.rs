//! Gradient-projection local VAR control.
//!
//! Every bus runs
//!
//! ```text
//! q_j(t+1) = (1 - a(t)) q_j(t) + a(t) P_j[(1 - d_j c_j) q_j(t) - d_j (V_j(t) - mu_j)]
//! ```
//!
//! using only its own voltage measurement. The named schemes are choices of the
//! stepsizes `d_j` and the relaxation `a(t)`:
//!
//! | scheme  | `d_j`                         | `a(t)` |
//! |---------|-------------------------------|--------|
//! | droop   | `1 / c_j`                     | 1      |
//! | scaled  | `eps / (X_jj + c_j)`          | 1      |
//! | delayed | any                           | < 1    |
//! | generic | any                           | any    |

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::netmodel::{FeederNetwork, GraphMatrices};
use crate::pflow::{solve_acpf, solve_lindistflow};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    GenericGp,
    Droop,
    Scaled,
    Delayed,
}

/// Relaxation weight `a(t)`. Only constant schedules are provided; line-search
/// rules would slot in as further variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule<T> {
    Constant(T),
}

impl<T: Real> AlphaSchedule<T> {
    pub fn at(&self, _t: usize) -> T {
        match *self {
            AlphaSchedule::Constant(a) => a,
        }
    }

    /// Supremum over all iterations.
    pub fn sup(&self) -> T {
        match *self {
            AlphaSchedule::Constant(a) => a,
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.sup();
        if a > T::zero() && a <= T::one() {
            Ok(())
        } else {
            Err(Error::Config(format!("relaxation weight must lie in (0, 1], got {a}")))
        }
    }
}

/// Box `[q_min, q_max]` of admissible inverter VAR setpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLimits<T> {
    pub q_min: DVector<T>,
    pub q_max: DVector<T>,
}

impl<T: Real> VarLimits<T> {
    pub fn new(q_min: DVector<T>, q_max: DVector<T>) -> Result<Self> {
        check_len("VarLimits", q_min.len(), q_max.len())?;
        if let Some(j) = (0..q_min.len()).find(|&j| !(q_min[j] <= q_max[j])) {
            return Err(Error::Parameter(format!("VAR limits at bus {}: q_min > q_max", j + 1)));
        }
        Ok(Self { q_min, q_max })
    }

    /// Symmetric limits `[-q_bar, q_bar]`.
    pub fn symmetric(q_bar: DVector<T>) -> Result<Self> {
        Self::new(-&q_bar, q_bar)
    }

    pub fn from_network(net: &FeederNetwork<T>) -> Self {
        Self {
            q_min: net.q_min(),
            q_max: net.q_max(),
        }
    }

    pub fn len(&self) -> usize {
        self.q_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_min.is_empty()
    }

    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        project(x, &self.q_min, &self.q_max)
    }

    pub fn contains(&self, q: &DVector<T>) -> bool {
        q.len() == self.len()
            && q.iter()
                .zip(self.q_min.iter().zip(self.q_max.iter()))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    /// Number of entries sitting on a bound.
    pub fn count_at_bounds(&self, q: &DVector<T>) -> usize {
        let tol = T::lit(1e-12);
        q.iter()
            .zip(self.q_min.iter().zip(self.q_max.iter()))
            .filter(|(&v, (&lo, &hi))| v - lo <= tol || hi - v <= tol)
            .count()
    }
}

/// Controller parameters: penalty `C`, stepsizes `D` (diagonals), relaxation,
/// voltage targets and VAR limits.
#[derive(Debug, Clone)]
pub struct ControlConfig<T> {
    pub scheme: Scheme,
    pub c: DVector<T>,
    pub d: DVector<T>,
    /// Scale factor used to derive `d` for the scaled scheme.
    pub epsilon: Option<T>,
    pub alpha: AlphaSchedule<T>,
    pub mu: DVector<T>,
    pub limits: VarLimits<T>,
}

impl<T: Real> ControlConfig<T> {
    /// Fully specified GP iteration.
    pub fn generic(c: DVector<T>, d: DVector<T>, alpha: T, mu: DVector<T>, limits: VarLimits<T>) -> Result<Self> {
        let cfg = Self {
            scheme: Scheme::GenericGp,
            c,
            d,
            epsilon: None,
            alpha: AlphaSchedule::Constant(alpha),
            mu,
            limits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Linear droop with slope `-1/c_j`, no deadband. Needs every `c_j > 0`.
    pub fn droop(c: DVector<T>, mu: DVector<T>, limits: VarLimits<T>) -> Result<Self> {
        if let Some(j) = c.iter().position(|&cj| !(cj > T::zero())) {
            return Err(Error::Config(format!(
                "droop control needs c > 0 at every bus (bus {} has c = {})",
                j + 1,
                c[j]
            )));
        }
        let d = c.map(|cj| T::one() / cj);
        let cfg = Self {
            scheme: Scheme::Droop,
            c,
            d,
            epsilon: None,
            alpha: AlphaSchedule::Constant(T::one()),
            mu,
            limits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse-Hessian-diagonal scaling `D = eps [diag(X + C)]^-1`.
    pub fn scaled(
        epsilon: T,
        c: DVector<T>,
        gm: &GraphMatrices<T>,
        mu: DVector<T>,
        limits: VarLimits<T>,
    ) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        check_len("ControlConfig::scaled(c)", gm.n(), c.len())?;
        let d = DVector::from_iterator(c.len(), (0..c.len()).map(|j| epsilon / (gm.x[(j, j)] + c[j])));
        let cfg = Self {
            scheme: Scheme::Scaled,
            c,
            d,
            epsilon: Some(epsilon),
            alpha: AlphaSchedule::Constant(T::one()),
            mu,
            limits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relaxed update with `0 < alpha < 1` and arbitrary stepsizes.
    pub fn delayed(d: DVector<T>, c: DVector<T>, alpha: T, mu: DVector<T>, limits: VarLimits<T>) -> Result<Self> {
        if !(alpha < T::one()) {
            return Err(Error::Config(format!("delayed control needs alpha < 1, got {alpha}")));
        }
        let cfg = Self {
            scheme: Scheme::Delayed,
            c,
            d,
            epsilon: None,
            alpha: AlphaSchedule::Constant(alpha),
            mu,
            limits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Delayed droop: `D = C^-1` relaxed by `alpha`.
    pub fn delayed_droop(c: DVector<T>, alpha: T, mu: DVector<T>, limits: VarLimits<T>) -> Result<Self> {
        if let Some(j) = c.iter().position(|&cj| !(cj > T::zero())) {
            return Err(Error::Config(format!("delayed droop needs c > 0 (bus {})", j + 1)));
        }
        let d = c.map(|cj| T::one() / cj);
        Self::delayed(d, c, alpha, mu, limits)
    }

    /// Delayed scaled control: `D = eps [diag(X + C)]^-1` relaxed by `alpha`.
    pub fn delayed_scaled(
        epsilon: T,
        c: DVector<T>,
        gm: &GraphMatrices<T>,
        alpha: T,
        mu: DVector<T>,
        limits: VarLimits<T>,
    ) -> Result<Self> {
        let mut cfg = Self::scaled(epsilon, c, gm, mu, limits)?;
        if !(alpha < T::one()) {
            return Err(Error::Config(format!("delayed control needs alpha < 1, got {alpha}")));
        }
        cfg.scheme = Scheme::Delayed;
        cfg.alpha = AlphaSchedule::Constant(alpha);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        check_len("ControlConfig(d)", n, self.d.len())?;
        check_len("ControlConfig(mu)", n, self.mu.len())?;
        check_len("ControlConfig(limits)", n, self.limits.len())?;
        if let Some(j) = self.d.iter().position(|&d| !(d > T::zero())) {
            return Err(Error::Config(format!("stepsize d must be positive (bus {})", j + 1)));
        }
        if let Some(j) = self.c.iter().position(|&c| !(c >= T::zero())) {
            return Err(Error::Config(format!("penalty c must be nonnegative (bus {})", j + 1)));
        }
        self.alpha.validate()
    }

    /// Replaces the VAR limits, e.g. when inverter headroom changes.
    pub fn set_limits(&mut self, limits: VarLimits<T>) -> Result<()> {
        check_len("set_limits", self.n(), limits.len())?;
        self.limits = limits;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlState<T> {
    pub t: usize,
    /// Inverter VAR setpoints.
    pub q: DVector<T>,
    /// Most recent voltage measurement.
    pub v: DVector<T>,
}

impl<T: Real> ControlState<T> {
    /// Zero setpoints projected into the limits.
    pub fn initial(limits: &VarLimits<T>) -> Self {
        let n = limits.len();
        Self {
            t: 0,
            q: limits.project(&DVector::zeros(n)),
            v: DVector::zeros(n),
        }
    }
}

/// `V - mu + C q`: each entry uses that bus's values only.
pub fn gradient<T: Real>(v: &DVector<T>, q: &DVector<T>, c: &DVector<T>, mu: &DVector<T>) -> Result<DVector<T>> {
    let n = v.len();
    check_len("gradient(q)", n, q.len())?;
    check_len("gradient(c)", n, c.len())?;
    check_len("gradient(mu)", n, mu.len())?;
    Ok(DVector::from_iterator(n, (0..n).map(|j| v[j] - mu[j] + c[j] * q[j])))
}

/// Componentwise clamp onto `[q_min, q_max]`.
pub fn project<T: Real>(x: &DVector<T>, q_min: &DVector<T>, q_max: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(q_min.iter().zip(q_max.iter()))
            .map(|(&v, (&lo, &hi))| clamp(v, lo, hi)),
    )
}

#[inline]
fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// One local update of every bus given the measured voltages.
pub fn step<T: Real>(
    state: &ControlState<T>,
    cfg: &ControlConfig<T>,
    v_measured: &DVector<T>,
) -> Result<ControlState<T>> {
    let n = cfg.n();
    check_len("step(q)", n, state.q.len())?;
    check_len("step(v)", n, v_measured.len())?;
    if !cfg.limits.contains(&state.q) {
        return Err(Error::Contract("incoming VAR setpoints violate the limits".into()));
    }
    let alpha = cfg.alpha.at(state.t);
    let lim = &cfg.limits;
    let q = DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let (lo, hi) = (lim.q_min[j], lim.q_max[j]);
            let qj = state.q[j];
            let mismatch = v_measured[j] - cfg.mu[j];
            let target = match cfg.scheme {
                Scheme::Droop => -mismatch / cfg.c[j],
                _ => (T::one() - cfg.d[j] * cfg.c[j]) * qj - cfg.d[j] * mismatch,
            };
            let projected = clamp(target, lo, hi);
            if alpha == T::one() {
                projected
            } else {
                clamp((T::one() - alpha) * qj + alpha * projected, lo, hi)
            }
        }),
    );
    Ok(ControlState {
        t: state.t + 1,
        q,
        v: v_measured.clone(),
    })
}

/// Plant that turns VAR setpoints into measured voltages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Plant {
    /// LinDistFlow model.
    Linear,
    /// Full AC power flow.
    Ac,
}

/// Voltage magnitudes of the non-slack buses when inverters inject `q_g`.
pub fn measure<T: Real>(
    plant: Plant,
    net: &FeederNetwork<T>,
    gm: &GraphMatrices<T>,
    p: &DVector<T>,
    qc: &DVector<T>,
    q_g: &DVector<T>,
) -> Result<DVector<T>> {
    let q_net = q_g - qc;
    match plant {
        Plant::Linear => solve_lindistflow(gm, p, &q_net, net.v0()),
        Plant::Ac => {
            let sol = solve_acpf(net, p, &q_net, net.v0())?;
            if sol.converged {
                Ok(sol.load_bus_magnitudes())
            } else {
                Err(Error::Diverged {
                    iterations: sol.iterations,
                    mismatch: sol.max_mismatch.as_f64(),
                })
            }
        }
    }
}

/// One row of a closed-loop trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Real"))]
pub struct TraceRecord<T> {
    pub tick: usize,
    /// Profile minute for time-series runs.
    pub minute: Option<usize>,
    /// `||V - mu||` at this tick.
    pub mismatch_norm: T,
    pub q: DVector<T>,
    pub v: DVector<T>,
    pub limits_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopStatus {
    Converged,
    MaxIterations,
    /// The AC plant failed at some tick; the trace stops there.
    Diverged {
        tick: usize,
        message: String,
    },
}

/// Two accumulation points of a period-2 oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Oscillation<T> {
    pub low: T,
    pub high: T,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopOutcome<T> {
    pub state: ControlState<T>,
    pub trace: Vec<TraceRecord<T>>,
    pub status: LoopStatus,
    /// Set when the run did not converge and its tail alternates between two levels.
    pub oscillation: Option<Oscillation<T>>,
}

impl<T: Real> ClosedLoopOutcome<T> {
    pub fn converged(&self) -> bool {
        self.status == LoopStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.state.t
    }

    pub fn final_mismatch(&self) -> Option<T> {
        self.trace.last().map(|r| r.mismatch_norm)
    }

    pub fn mismatch_series(&self) -> Vec<T> {
        self.trace.iter().map(|r| r.mismatch_norm).collect()
    }
}

/// Samples used by the oscillation detector.
pub const OSCILLATION_WINDOW: usize = 20;
const OSCILLATION_SPREAD: f64 = 1e-6;
const OSCILLATION_SEPARATION: f64 = 1e-4;

/// Splits the last 20 samples at their widest gap; two tight clusters
/// (spread < 1e-6) that are well apart (> 1e-4) mean a period-2 oscillation.
pub fn detect_period_two<T: Real>(series: &[T]) -> Option<Oscillation<T>> {
    if series.len() < OSCILLATION_WINDOW {
        return None;
    }
    let mut tail: Vec<T> = series[series.len() - OSCILLATION_WINDOW..].to_vec();
    if tail.iter().any(|v| !v.is_finite()) {
        return None;
    }
    tail.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let split = (1..tail.len()).max_by(|&i, &k| {
        (tail[i] - tail[i - 1])
            .partial_cmp(&(tail[k] - tail[k - 1]))
            .expect("finite")
    })?;
    let (low, high) = tail.split_at(split);
    let spread = |c: &[T]| c[c.len() - 1] - c[0];
    let tight = T::lit(OSCILLATION_SPREAD);
    if spread(low) < tight && spread(high) < tight && high[0] - low[low.len() - 1] > T::lit(OSCILLATION_SEPARATION) {
        Some(Oscillation {
            low: low[low.len() / 2],
            high: high[high.len() / 2],
        })
    } else {
        None
    }
}

/// Alternates plant solve, measurement and [`step`] from `q(0) = P[0]` until
/// `||q(t+1) - q(t)||_inf <= tol` or `max_iter` updates.
pub fn run_closed_loop<T: Real>(
    net: &FeederNetwork<T>,
    gm: &GraphMatrices<T>,
    cfg: &ControlConfig<T>,
    plant: Plant,
    max_iter: usize,
    tol: T,
) -> Result<ClosedLoopOutcome<T>> {
    cfg.validate()?;
    check_len("run_closed_loop", net.n(), cfg.n())?;
    let p = net.p();
    let qc = net.qc();
    let mut state = ControlState::initial(&cfg.limits);
    let mut trace = Vec::new();
    let mut status = LoopStatus::MaxIterations;

    for tick in 0..max_iter {
        let v = match measure(plant, net, gm, &p, &qc, &state.q) {
            Ok(v) => v,
            Err(e @ Error::Diverged { .. }) => {
                status = LoopStatus::Diverged {
                    tick,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        trace.push(TraceRecord {
            tick,
            minute: None,
            mismatch_norm: (&v - &cfg.mu).norm(),
            q: state.q.clone(),
            v: v.clone(),
            limits_hit: cfg.limits.count_at_bounds(&state.q),
        });
        let next = step(&state, cfg, &v)?;
        let dq = (&next.q - &state.q).amax();
        state = next;
        if dq <= tol {
            status = LoopStatus::Converged;
            break;
        }
    }

    let oscillation = if status == LoopStatus::MaxIterations {
        let series: Vec<T> = trace.iter().map(|r| r.mismatch_norm).collect();
        detect_period_two(&series)
    } else {
        None
    };
    Ok(ClosedLoopOutcome {
        state,
        trace,
        status,
        oscillation,
    })
}

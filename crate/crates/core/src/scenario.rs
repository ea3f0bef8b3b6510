//! Static and time-series closed-loop experiments.
//!
//! A dynamic run replays a minute-resolution per-home load/PV profile. Every
//! minute the bus injections and inverter VAR headroom are refreshed; within
//! the minute the controller acts every `control_period_s` on the voltages
//! returned by the plant. Setpoints carry over between minutes and are
//! re-projected when the headroom shrinks.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{
    measure, run_closed_loop, step, ClosedLoopOutcome, ControlConfig, ControlState, LoopStatus, Plant, TraceRecord,
    VarLimits,
};
use crate::error::{check_len, Error, Result};
use crate::netmodel::{FeederNetwork, GraphMatrices, PerUnitBase};
use crate::Real;

/// Convergence tolerance on `||q(t+1) - q(t)||_inf` for static runs.
pub const STATIC_TOL: f64 = 1e-8;
pub const MINUTES_PER_DAY: usize = 1440;
pub const PROFILE_HEADER: [&str; 3] = ["minute", "load_kw_per_home", "pv_kw_per_home"];

/// Closed loop on the network's own static loads.
pub fn run_static<T: Real>(
    net: &FeederNetwork<T>,
    gm: &GraphMatrices<T>,
    cfg: &ControlConfig<T>,
    plant: Plant,
    max_iter: usize,
) -> Result<ClosedLoopOutcome<T>> {
    run_closed_loop(net, gm, cfg, plant, max_iter, T::lit(STATIC_TOL))
}

/// Per-home load and PV generation at one-minute resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyProfile {
    pub minutes: Vec<usize>,
    pub load_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    minute: usize,
    load_kw_per_home: f64,
    pv_kw_per_home: f64,
}

impl DailyProfile {
    pub fn new(minutes: Vec<usize>, load_kw: Vec<f64>, pv_kw: Vec<f64>) -> Result<Self> {
        check_len("DailyProfile(load_kw)", minutes.len(), load_kw.len())?;
        check_len("DailyProfile(pv_kw)", minutes.len(), pv_kw.len())?;
        if minutes.is_empty() {
            return Err(Error::Parse("profile has no rows".into()));
        }
        if let Some(w) = minutes.windows(2).find(|w| w[1] != w[0] + 1) {
            return Err(Error::Parse(format!(
                "profile minutes must increase in steps of one (found {} then {})",
                w[0], w[1]
            )));
        }
        if let Some(k) = pv_kw.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::Parse(format!("negative PV generation at minute {}", minutes[k])));
        }
        if let Some(k) = load_kw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite load at minute {}", minutes[k])));
        }
        Ok(Self {
            minutes,
            load_kw,
            pv_kw,
        })
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn covers_full_day(&self) -> bool {
        self.len() == MINUTES_PER_DAY && self.minutes[0] == 0
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != PROFILE_HEADER {
            return Err(Error::Parse(format!(
                "profile header must be `{}`, found `{}`",
                PROFILE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut minutes, mut load, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for (k, row) in rdr.deserialize::<ProfileRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("profile row {}: {e}", k + 1)))?;
            minutes.push(row.minute);
            load.push(row.load_kw_per_home);
            pv.push(row.pv_kw_per_home);
        }
        Self::new(minutes, load, pv)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(PROFILE_HEADER)?;
        for k in 0..self.len() {
            wtr.write_record([
                self.minutes[k].to_string(),
                format!("{:.4}", self.load_kw[k]),
                format!("{:.4}", self.pv_kw[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Deterministic synthetic residential day: base load around 1.5 kW with a
    /// morning bump, an evening peak of about 2.5x base near 20:00 and a few
    /// appliance start-ups; PV follows a 3 kW clear-sky arc between 06:00 and
    /// 20:00 with three cloud dips. Values are rounded to 4 decimals.
    pub fn synthetic() -> Self {
        let bump = |h: f64, center: f64, width: f64| {
            let d = (h - center).abs();
            let d = d.min(24.0 - d);
            (-0.5 * (d / width).powi(2)).exp()
        };
        let within =
            |m: usize, from: (usize, usize), to: (usize, usize)| m >= from.0 * 60 + from.1 && m < to.0 * 60 + to.1;
        let round4 = |v: f64| format!("{v:.4}").parse::<f64>().expect("formatted float parses");

        let minutes: Vec<usize> = (0..MINUTES_PER_DAY).collect();
        let load_kw = minutes
            .iter()
            .map(|&m| {
                let h = m as f64 / 60.0;
                let mut kw = 1.5 + 0.6 * bump(h, 7.5, 1.0) - 0.2 * bump(h, 14.0, 2.0) + 2.25 * bump(h, 20.0, 1.6);
                if within(m, (7, 5), (7, 20)) {
                    kw += 1.0;
                }
                if within(m, (12, 30), (12, 45)) {
                    kw += 1.2;
                }
                if within(m, (18, 40), (19, 0)) {
                    kw += 1.5;
                }
                round4(kw)
            })
            .collect();
        let pv_kw = minutes
            .iter()
            .map(|&m| {
                let (sunrise, sunset) = (360.0, 1200.0);
                let t = m as f64;
                if t <= sunrise || t >= sunset {
                    return 0.0;
                }
                let mut kw = 3.0
                    * (std::f64::consts::PI * (t - sunrise) / (sunset - sunrise))
                        .sin()
                        .powf(1.5);
                if within(m, (11, 20), (11, 35)) || within(m, (13, 40), (13, 50)) || within(m, (15, 0), (15, 25)) {
                    kw *= 0.35;
                }
                round4(kw)
            })
            .collect();
        Self::new(minutes, load_kw, pv_kw).expect("synthetic profile is valid")
    }
}

/// Time-series scenario: every bus hosts `homes_per_bus[j]` identical homes
/// following the profile, each with a PV inverter.
#[derive(Debug, Clone)]
pub struct DynamicScenario {
    pub profile: DailyProfile,
    /// Homes at each non-slack bus.
    pub homes_per_bus: Vec<u32>,
    pub pv_peak_kw: f64,
    /// Inverter apparent rating as a multiple of the PV peak.
    pub inverter_rating_factor: f64,
    pub control_period_s: f64,
    pub profile_period_s: f64,
    /// Load reactive power per kW of real load.
    pub load_kvar_per_kw: f64,
}

impl DynamicScenario {
    /// Defaults: 3 kW PV peak, inverters rated 5% above it, control every 5 s,
    /// profile step 60 s, loads at (1 + j0.5) per kW.
    pub fn new(profile: DailyProfile, homes_per_bus: Vec<u32>) -> Self {
        Self {
            profile,
            homes_per_bus,
            pv_peak_kw: 3.0,
            inverter_rating_factor: 1.05,
            control_period_s: 5.0,
            profile_period_s: 60.0,
            load_kvar_per_kw: 0.5,
        }
    }

    pub fn inverter_rating_kva(&self) -> f64 {
        self.inverter_rating_factor * self.pv_peak_kw
    }

    /// Control ticks per profile step.
    pub fn ticks_per_step(&self) -> Result<usize> {
        let ratio = self.profile_period_s / self.control_period_s;
        let rounded = ratio.round();
        if !(self.control_period_s > 0.0) || rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "control period {} s must divide the profile period {} s",
                self.control_period_s, self.profile_period_s
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("DynamicScenario(homes_per_bus)", n, self.homes_per_bus.len())?;
        if !(self.pv_peak_kw >= 0.0) || !(self.inverter_rating_factor >= 0.0) {
            return Err(Error::Config(
                "PV peak and inverter rating factor must be nonnegative".into(),
            ));
        }
        self.ticks_per_step().map(|_| ())
    }

    /// Per-unit bus injections `(p, qc)` at profile row `idx`.
    pub fn injections_at<T: Real>(&self, idx: usize, base: PerUnitBase) -> (DVector<T>, DVector<T>) {
        let s_kva = base.power_kva();
        let (load, pv) = (self.profile.load_kw[idx], self.profile.pv_kw[idx]);
        let n = self.homes_per_bus.len();
        let homes = |j: usize| f64::from(self.homes_per_bus[j]);
        let p = DVector::from_fn(n, |j, _| T::lit(homes(j) * (pv - load) / s_kva));
        let qc = DVector::from_fn(n, |j, _| T::lit(homes(j) * load * self.load_kvar_per_kw / s_kva));
        (p, qc)
    }
}

/// Symmetric VAR limits from the inverter headroom `sqrt(S^2 - pv^2)` at profile row `idx`.
pub fn var_limits_at<T: Real>(scen: &DynamicScenario, idx: usize, base: PerUnitBase) -> VarLimits<T> {
    let s = scen.inverter_rating_kva();
    let pv = scen.profile.pv_kw[idx];
    let headroom_kva = (s * s - pv * pv).max(0.0).sqrt();
    let q_bar = DVector::from_iterator(
        scen.homes_per_bus.len(),
        scen.homes_per_bus
            .iter()
            .map(|&h| T::lit(f64::from(h) * headroom_kva / base.power_kva())),
    );
    VarLimits::symmetric(q_bar).expect("headroom is nonnegative")
}

/// Controller used in a dynamic run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicController {
    /// Inverters stay at zero VARs.
    NoVar,
    /// Scaled control with a constant penalty.
    Scaled { epsilon: f64, c: f64 },
    /// Delayed droop whose slope follows the instantaneous headroom:
    /// `c_j(t) = voltage_window / q_bar_j(t)`.
    DelayedDroop { alpha: f64, voltage_window: f64 },
}

impl DynamicController {
    pub fn label(&self) -> &'static str {
        match self {
            DynamicController::NoVar => "no_var",
            DynamicController::Scaled { .. } => "scaled",
            DynamicController::DelayedDroop { .. } => "delayed_droop",
        }
    }

    fn config<T: Real>(
        &self,
        gm: &GraphMatrices<T>,
        mu: &DVector<T>,
        limits: VarLimits<T>,
    ) -> Result<Option<ControlConfig<T>>> {
        let n = gm.n();
        match *self {
            DynamicController::NoVar => Ok(None),
            DynamicController::Scaled { epsilon, c } => ControlConfig::scaled(
                T::lit(epsilon),
                DVector::from_element(n, T::lit(c)),
                gm,
                mu.clone(),
                limits,
            )
            .map(Some),
            DynamicController::DelayedDroop { alpha, voltage_window } => {
                let floor = T::lit(1e-9);
                let c = limits.q_max.map(|q_bar| T::lit(voltage_window) / q_bar.max(floor));
                ControlConfig::delayed_droop(c, T::lit(alpha), mu.clone(), limits).map(Some)
            }
        }
    }
}

/// Aggregate of the control ticks within one profile minute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinuteSummary<T> {
    pub minute: usize,
    pub mean_mismatch: T,
    pub last_mismatch: T,
    pub min_v: T,
    pub max_v: T,
}

#[derive(Debug, Clone)]
pub struct DynamicOutcome<T> {
    pub controller: DynamicController,
    pub ticks: Vec<TraceRecord<T>>,
    pub minutes: Vec<MinuteSummary<T>>,
    pub status: LoopStatus,
}

/// Day-level report written next to a dynamic trace.
#[derive(Debug, Clone, Serialize)]
pub struct DailySummary {
    pub controller: DynamicController,
    pub status: LoopStatus,
    pub minutes: usize,
    pub ticks: usize,
    pub mean_mismatch: f64,
    pub min_voltage: f64,
    pub max_voltage: f64,
    /// Minutes during which some bus fell below 0.95 p.u.
    pub undervoltage_minutes: usize,
    /// Minutes during which some bus exceeded 1.05 p.u.
    pub overvoltage_minutes: usize,
    /// Daily minimum voltage of buses 1..N.
    pub v_min_per_bus: Vec<f64>,
    /// Daily maximum voltage of buses 1..N.
    pub v_max_per_bus: Vec<f64>,
}

impl<T: Real> DynamicOutcome<T> {
    pub fn minute_mismatch(&self) -> Vec<T> {
        self.minutes.iter().map(|m| m.mean_mismatch).collect()
    }

    pub fn summary(&self) -> DailySummary {
        let n = self.ticks.first().map_or(0, |r| r.v.len());
        let mut v_min = vec![f64::INFINITY; n];
        let mut v_max = vec![f64::NEG_INFINITY; n];
        for rec in &self.ticks {
            for (j, v) in rec.v.iter().enumerate() {
                let v = v.as_f64();
                v_min[j] = v_min[j].min(v);
                v_max[j] = v_max[j].max(v);
            }
        }
        let mean = if self.minutes.is_empty() {
            0.0
        } else {
            self.minutes.iter().map(|m| m.mean_mismatch.as_f64()).sum::<f64>() / self.minutes.len() as f64
        };
        DailySummary {
            controller: self.controller,
            status: self.status.clone(),
            minutes: self.minutes.len(),
            ticks: self.ticks.len(),
            mean_mismatch: mean,
            min_voltage: v_min.iter().copied().fold(f64::INFINITY, f64::min),
            max_voltage: v_max.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            undervoltage_minutes: self.minutes.iter().filter(|m| m.min_v.as_f64() < 0.95).count(),
            overvoltage_minutes: self.minutes.iter().filter(|m| m.max_v.as_f64() > 1.05).count(),
            v_min_per_bus: v_min,
            v_max_per_bus: v_max,
        }
    }
}

/// Replays the scenario through the plant with the given controller.
///
/// An AC divergence stops the run; the outcome then carries the partial trace
/// and a `Diverged` status.
pub fn run_dynamic<T: Real>(
    net: &FeederNetwork<T>,
    gm: &GraphMatrices<T>,
    scen: &DynamicScenario,
    controller: DynamicController,
    plant: Plant,
) -> Result<DynamicOutcome<T>> {
    let n = net.n();
    scen.validate(n)?;
    let ticks_per_step = scen.ticks_per_step()?;
    let base = net.base();
    let mu = net.mu();

    let mut q = DVector::zeros(n);
    let mut tick = 0usize;
    let mut ticks = Vec::with_capacity(scen.profile.len() * ticks_per_step);
    let mut minutes = Vec::with_capacity(scen.profile.len());
    let mut status = LoopStatus::Converged;

    'profile: for idx in 0..scen.profile.len() {
        let minute = scen.profile.minutes[idx];
        let (p, qc) = scen.injections_at::<T>(idx, base);
        let limits = var_limits_at::<T>(scen, idx, base);
        let cfg = controller.config(gm, &mu, limits.clone())?;
        q = match cfg {
            Some(_) => limits.project(&q),
            None => DVector::zeros(n),
        };
        let mut state = ControlState {
            t: tick,
            q,
            v: DVector::zeros(n),
        };

        let first = ticks.len();
        for _ in 0..ticks_per_step {
            let v = match measure(plant, net, gm, &p, &qc, &state.q) {
                Ok(v) => v,
                Err(e @ Error::Diverged { .. }) => {
                    status = LoopStatus::Diverged {
                        tick,
                        message: e.to_string(),
                    };
                    summarize_minute(minute, &ticks[first..], &mut minutes);
                    break 'profile;
                }
                Err(e) => return Err(e),
            };
            ticks.push(TraceRecord {
                tick,
                minute: Some(minute),
                mismatch_norm: (&v - &mu).norm(),
                q: state.q.clone(),
                v: v.clone(),
                limits_hit: limits.count_at_bounds(&state.q),
            });
            if let Some(cfg) = &cfg {
                state = step(&state, cfg, &v)?;
            } else {
                state.t += 1;
                state.v = v;
            }
            tick += 1;
        }
        q = state.q;
        summarize_minute(minute, &ticks[first..], &mut minutes);
    }
    Ok(DynamicOutcome {
        controller,
        ticks,
        minutes,
        status,
    })
}

fn summarize_minute<T: Real>(minute: usize, records: &[TraceRecord<T>], out: &mut Vec<MinuteSummary<T>>) {
    let Some(last) = records.last() else {
        return;
    };
    let sum = records.iter().fold(T::zero(), |acc, r| acc + r.mismatch_norm);
    let (min_v, max_v) = records
        .iter()
        .fold((T::max_value().unwrap_or_else(T::one), T::zero()), |(lo, hi), r| {
            (lo.min(r.v.min()), hi.max(r.v.max()))
        });
    out.push(MinuteSummary {
        minute,
        mean_mismatch: sum / T::lit(records.len() as f64),
        last_mismatch: last.mismatch_norm,
        min_v,
        max_v,
    });
}

/// Writes `tick,minute,mismatch_norm,limits_hit`, plus `q_<bus>` and `v_<bus>`
/// columns when `full` is set.
pub fn write_trace_csv<T: Real>(writer: impl Write, records: &[TraceRecord<T>], full: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = records.first().map_or(0, |r| r.q.len());
    let mut header = vec![
        "tick".to_string(),
        "minute".into(),
        "mismatch_norm".into(),
        "limits_hit".into(),
    ];
    if full {
        header.extend((1..=n).map(|b| format!("q_{b}")));
        header.extend((1..=n).map(|b| format!("v_{b}")));
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.tick.to_string(),
            r.minute.map(|m| m.to_string()).unwrap_or_default(),
            format!("{:e}", r.mismatch_norm.as_f64()),
            r.limits_hit.to_string(),
        ];
        if full {
            row.extend(r.q.iter().map(|v| format!("{:e}", v.as_f64())));
            row.extend(r.v.iter().map(|v| format!("{:e}", v.as_f64())));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

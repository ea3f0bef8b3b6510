//! JSON network file. Quantities are stored in physical units (kW, kVAR, ohm)
//! and converted to per unit when the file is turned into a [`FeederNetwork`].
//!
//! ```json
//! {
//!   "s_base_mva": 1.0, "v_base_kv": 12.0, "v0_pu": 1.0,
//!   "buses": [{"id": 0, "p_kw": 0, "q_load_kvar": 0, "q_min_kvar": 0, "q_max_kvar": 0, "c": 0, "mu": 1}],
//!   "lines": [{"from": 0, "to": 1, "r_ohm": 0.466, "x_ohm": 0.733}]
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Bus, FeederNetwork, Line, PerUnitBase};
use crate::Real;

fn one() -> f64 {
    1.0
}

fn twelve() -> f64 {
    12.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default = "one")]
    pub s_base_mva: f64,
    #[serde(default = "twelve")]
    pub v_base_kv: f64,
    #[serde(default = "one")]
    pub v0_pu: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: usize,
    /// Real power injection in kW (negative for load).
    #[serde(default)]
    pub p_kw: f64,
    #[serde(default)]
    pub q_load_kvar: f64,
    #[serde(default)]
    pub q_min_kvar: f64,
    #[serde(default)]
    pub q_max_kvar: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl NetworkFile {
    /// Parses the document. Errors name the offending key path and the line/column.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse(format!("network file: at `{path}`: {inner}"))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network file serializes")
    }

    pub fn base(&self) -> PerUnitBase {
        PerUnitBase {
            s_base_mva: self.s_base_mva,
            v_base_kv: self.v_base_kv,
        }
    }

    /// Converts to a per-unit network. Buses may appear in any order but their
    /// ids must be exactly `0..N`.
    pub fn to_network<T: Real>(&self) -> Result<FeederNetwork<T>> {
        if !(self.s_base_mva > 0.0) || !(self.v_base_kv > 0.0) {
            return Err(Error::Parameter("per-unit bases must be positive".into()));
        }
        let base = self.base();
        let s_kva = base.power_kva();
        let z_ohm = base.impedance_ohm();

        let mut records: Vec<&BusRecord> = self.buses.iter().collect();
        records.sort_by_key(|b| b.id);
        for (k, b) in records.iter().enumerate() {
            if b.id != k {
                return Err(Error::Parameter(format!(
                    "bus ids must be exactly 0..{}; missing or duplicate id near {k}",
                    records.len().saturating_sub(1)
                )));
            }
        }
        let buses = records
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                p: T::lit(b.p_kw / s_kva),
                qc: T::lit(b.q_load_kvar / s_kva),
                q_min: T::lit(b.q_min_kvar / s_kva),
                q_max: T::lit(b.q_max_kvar / s_kva),
                c: T::lit(b.c),
                mu: T::lit(b.mu),
            })
            .collect();
        let lines = self
            .lines
            .iter()
            .map(|l| Line::new(l.from, l.to, T::lit(l.r_ohm / z_ohm), T::lit(l.x_ohm / z_ohm)))
            .collect();
        FeederNetwork::with_base(buses, lines, T::lit(self.v0_pu), base)
    }
}

pub fn load_network<T: Real>(path: impl AsRef<Path>) -> Result<FeederNetwork<T>> {
    NetworkFile::load(path)?.to_network()
}

/// Equal-impedance 16-bus radial feeder (a 15-segment main line), optionally
/// with the two loop-closing lines 12-14 and 13-15. Each bus carries a
/// (100 + j50) kVA load, +/-100 kVAR of inverter capability and `c = 0.2`.
///
/// `v_base_kv` is 10.4 kV rather than the nominal 12 kV: see the README's
/// calibration section.
pub fn feeder16(meshed: bool) -> NetworkFile {
    let mut buses = vec![BusRecord {
        id: 0,
        p_kw: 0.0,
        q_load_kvar: 0.0,
        q_min_kvar: 0.0,
        q_max_kvar: 0.0,
        c: 0.0,
        mu: 1.0,
    }];
    buses.extend((1..=15).map(|id| BusRecord {
        id,
        p_kw: -100.0,
        q_load_kvar: 50.0,
        q_min_kvar: -100.0,
        q_max_kvar: 100.0,
        c: 0.2,
        mu: 1.0,
    }));
    let segment = |from, to| LineRecord {
        from,
        to,
        r_ohm: 0.466,
        x_ohm: 0.733,
    };
    let mut lines: Vec<LineRecord> = (1..=15).map(|j| segment(j - 1, j)).collect();
    if meshed {
        lines.push(segment(12, 14));
        lines.push(segment(13, 15));
    }
    NetworkFile {
        s_base_mva: 1.0,
        v_base_kv: 10.4,
        v0_pu: 1.0,
        buses,
        lines,
    }
}

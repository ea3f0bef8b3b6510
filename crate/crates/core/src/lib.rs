//! Local volt/VAR control for radial and meshed distribution feeders.
//!
//! The crate is organized bottom-up:
//!
//! - [`netmodel`]: feeder graph, incidence matrices and the LinDistFlow
//!   sensitivities `R`, `X` and `B = X^-1`.
//! - [`netfile`]: the JSON network file (physical units, converted to per unit on load).
//! - [`pflow`]: the linear plant and a full AC power flow used as the "real" plant.
//! - [`control`]: gradient-projection local VAR control (droop, scaled, delayed).
//! - [`stability`]: eigenvalue certificates and stepsize bounds.
//! - [`centralopt`]: centralized box-constrained QP references.
//! - [`scenario`]: static and time-series closed-loop experiments.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`). The `f64`
//! aliases below are what the CLI and most callers use.

// Parameter checks are written `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod centralopt;
pub mod control;
pub mod error;
pub mod netfile;
pub mod netmodel;
pub mod pflow;
mod scalar;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Bus = netmodel::Bus<f64>;
pub type Line = netmodel::Line<f64>;
pub type FeederNetwork = netmodel::FeederNetwork<f64>;
pub type Incidence = netmodel::Incidence<f64>;
pub type GraphMatrices = netmodel::GraphMatrices<f64>;
pub type AcSolution = pflow::AcSolution<f64>;
pub type ControlConfig = control::ControlConfig<f64>;
pub type ControlState = control::ControlState<f64>;
pub type TraceRecord = control::TraceRecord<f64>;
pub type ClosedLoopOutcome = control::ClosedLoopOutcome<f64>;
pub type VarLimits = control::VarLimits<f64>;
pub type StabilityReport = stability::StabilityReport<f64>;
pub type QpProblem = centralopt::QpProblem<f64>;
pub type QpSolution = centralopt::QpSolution<f64>;

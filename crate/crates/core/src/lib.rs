//! Covariance-level simulator and optimizer for multi-IRS integrated sensing
//! and communication: LoS channel construction, CRB of the target angle,
//! communication rate, sensing-constrained power allocation, alternating
//! phase-shift optimization and IRS deployment search.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comm;
pub mod deployment;
pub mod error;
pub mod experiment;
pub mod geometry;
mod linalg;
pub mod phases;
pub mod power;
pub mod sca;
pub mod scenario;
pub mod sensing;
pub mod synthetic;

pub use error::{IsacError, Result};
pub use geometry::{CMatrix, CVector};
pub use phases::PhaseShifts;
pub use power::{AllocationProblem, KktCertificate, PowerAllocation, Regime};
pub use scenario::{IrsSite, Layout, ScenarioConfig, SystemParams};
pub use sensing::{CrbMethod, CrbReport};

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Linear to dB (`10 log10`).
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

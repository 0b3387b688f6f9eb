//! Digital-twin engine for active distribution networks.
//!
//! The crate models a medium-voltage grid fed from a single external
//! connection, replays smart-meter measurements against it and runs three
//! assessment engines on top of a shared AC power-flow core:
//!
//! * steady-state assessment: Newton-Raphson power flow plus limit checks,
//! * contingency assessment: N-1 branch outage sweeps,
//! * flexibility assessment: nonlinear redispatch of distributed generators.
//!
//! All engines evaluate power balance through the same admittance matrix and
//! mismatch function, so a redispatch accepted by the optimizer reproduces
//! the same state when replayed through the power flow.

pub mod cae;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod ingestion;
pub mod network;
pub mod powerflow;
pub mod rsae;
pub mod smfae;

pub use error::{Error, Result};

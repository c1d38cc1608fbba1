//! Deterministic modeled hardware: CPU cores behind an off-chip link and a
//! vaulted memory stack with logic-layer cores. Work is described as
//! [`TaskDemand`] bills and timed by fair sharing in [`Simulator`].

mod config;
mod demand;
mod energy;
mod sim;

pub use config::HardwareConfig;
pub use demand::{CoreId, SimTask, TaskDemand};
pub use energy::EnergyLedger;
pub use sim::{Completion, Resource, ServiceTotals, Simulator, TaskId};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("invalid hardware config: {0}")]
    InvalidConfig(String),
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
    #[error("unknown resource {0}")]
    UnknownResource(String),
    #[error("epoch length must be positive, got {0}")]
    InvalidEpoch(f64),
    #[error("simulation stalled at t={time}s: demanded resources have no capacity")]
    StalledSimulation { time: f64 },
}

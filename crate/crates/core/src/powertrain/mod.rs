//! Fixed-step simulation of the grid, battery, rectifier and inverter paths.

pub mod battery;
pub mod filter;
pub mod grid;
pub mod profile;
pub mod sim;
pub mod spwm;

use thiserror::Error;

use crate::lti::LtiError;
use crate::mpc::MpcError;
use crate::scenario::ScenarioError;
use crate::supervisor::SupervisorError;

pub use battery::{battery_step, Battery};
pub use filter::{FilterPlant, LclParams};
pub use grid::{grid_voltages, GridSource};
pub use profile::PowerProfile;
pub use sim::{simulate_scenario, simulate_with, EnergyLedger, ModeTransition, MpcTraceRow, SimOptions, TimeSeries, COLUMNS};
pub use spwm::{inverter_bridge_voltage, spwm_switch_states, GateSignals, SpwmConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ScenarioError),
    #[error("shoot-through on phase {phase}: both switches of the leg are on")]
    ShootThrough { phase: usize },
    #[error("state became non-finite at t = {t} s")]
    Diverged { t: f64 },
    #[error("plant model: {0}")]
    Model(#[from] LtiError),
    #[error("controller: {0}")]
    Controller(#[from] MpcError),
    #[error("supervisor: {0}")]
    Supervisor(#[from] SupervisorError),
}

//! Closed-loop G2V/V2G charger simulation with a receding-horizon controller
//! for the grid-tied inverter, and harmonic analysis of the results.

pub mod lti;
pub mod mpc;
pub mod power_quality;
pub mod powertrain;
pub mod runner;
pub mod scenario;
pub mod supervisor;

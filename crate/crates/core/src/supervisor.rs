//! G2V/V2G mode selection from the load/source power balance and battery voltage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of rated voltage at or above which the battery discharges into the grid.
pub const UPPER_FRACTION: f64 = 0.75;
/// Lower voltage band edge, as a fraction of rated voltage.
pub const LOWER_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("rated voltage must be positive and finite, got {0}")]
    InvalidRatedVoltage(f64),
    #[error("hysteresis must be finite and >= 0, got {0}")]
    InvalidHysteresis(f64),
}

/// Converter operating mode (the control logic `c`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// `c = 0`: grid charges the battery through the rectifier.
    G2V,
    /// `c = 1`: battery feeds the grid through the inverter.
    V2G,
}

impl Mode {
    pub fn logic(self) -> u8 {
        match self {
            Mode::G2V => 0,
            Mode::V2G => 1,
        }
    }
}

/// Which battery voltage band the decision fell into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoltageBand {
    High,
    Mid,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: Mode,
    pub x: f64,
    pub v_dc: f64,
    pub band: VoltageBand,
    pub upper_threshold: f64,
    pub lower_threshold: f64,
}

impl ModeDecision {
    pub fn c(&self) -> u8 {
        self.mode.logic()
    }
}

/// Load minus source power.
pub fn compute_x(p_load: f64, p_source: f64) -> f64 {
    p_load - p_source
}

/// Applies the logic table. Both power-balance branches (`x >= 0` and `x < 0`)
/// select V2G exactly when `v_dc >= 0.75 V_rated`; `x` is carried through so
/// callers can log it.
///
/// With `hysteresis > 0` and `prev` in V2G, leaving V2G requires
/// `v_dc < 0.75 V_rated - hysteresis`.
pub fn decide_mode(
    x: f64,
    v_dc: f64,
    v_rated: f64,
    hysteresis: f64,
    prev: Mode,
) -> Result<ModeDecision, SupervisorError> {
    if !(v_rated.is_finite() && v_rated > 0.0) {
        return Err(SupervisorError::InvalidRatedVoltage(v_rated));
    }
    if !(hysteresis.is_finite() && hysteresis >= 0.0) {
        return Err(SupervisorError::InvalidHysteresis(hysteresis));
    }
    let upper = UPPER_FRACTION * v_rated;
    let lower = LOWER_FRACTION * v_rated;
    let band = if v_dc >= upper {
        VoltageBand::High
    } else if v_dc >= lower {
        VoltageBand::Mid
    } else {
        VoltageBand::Low
    };

    let table_mode = match (x >= 0.0, band) {
        (true, VoltageBand::High) => Mode::V2G,
        (true, VoltageBand::Mid) => Mode::G2V,
        (true, VoltageBand::Low) => Mode::G2V,
        (false, VoltageBand::High) => Mode::V2G,
        (false, VoltageBand::Mid) => Mode::G2V,
        (false, VoltageBand::Low) => Mode::G2V,
    };
    let mode = if hysteresis > 0.0 && prev == Mode::V2G && table_mode == Mode::G2V && v_dc >= upper - hysteresis {
        Mode::V2G
    } else {
        table_mode
    };

    Ok(ModeDecision {
        mode,
        x,
        v_dc,
        band,
        upper_threshold: upper,
        lower_threshold: lower,
    })
}

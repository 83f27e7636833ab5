use serde::{Deserialize, Serialize};

/// Battery with a linear open-circuit voltage `V_oc = soc * V_rated` and a
/// series internal resistance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub v_rated: f64,
    pub capacity_ah: f64,
    pub soc: f64,
    pub r_int: f64,
    /// Terminal voltage after the most recent step.
    pub v_dc: f64,
}

impl Battery {
    pub fn new(v_rated: f64, capacity_ah: f64, soc: f64, r_int: f64) -> Self {
        let soc = soc.clamp(0.0, 1.0);
        Self {
            v_rated,
            capacity_ah,
            soc,
            r_int,
            v_dc: soc * v_rated,
        }
    }

    pub fn open_circuit_voltage(&self) -> f64 {
        self.soc * self.v_rated
    }

    /// Coulomb counting over `dt` seconds with `current` in amperes, positive
    /// when discharging.
    pub fn step(&self, current: f64, dt: f64) -> Battery {
        let soc = (self.soc - current * dt / (3600.0 * self.capacity_ah)).clamp(0.0, 1.0);
        Battery {
            soc,
            v_dc: soc * self.v_rated - current * self.r_int,
            ..*self
        }
    }
}

pub fn battery_step(batt: &Battery, current: f64, dt: f64) -> Battery {
    batt.step(current, dt)
}

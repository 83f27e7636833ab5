//! Carrier-based sinusoidal PWM for a two-level three-phase bridge.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpwmConfig {
    pub carrier_hz: f64,
    /// Blanking interval after each commutation, seconds.
    #[serde(default)]
    pub dead_time: f64,
}

impl Default for SpwmConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 5000.0,
            dead_time: 0.0,
        }
    }
}

impl SpwmConfig {
    /// Symmetric triangle in `[-1, 1]`, starting at `-1` for `t = 0`.
    pub fn carrier_value(&self, t: f64) -> f64 {
        let phase = (t * self.carrier_hz).fract();
        1.0 - 4.0 * (phase - 0.5).abs()
    }
}

/// Gate commands for the six switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateSignals {
    pub upper: [bool; 3],
    pub lower: [bool; 3],
}

impl GateSignals {
    /// `SW1..SW6` ordered as (upper a, lower a, upper b, lower b, upper c, lower c).
    pub fn switches(&self) -> [bool; 6] {
        [
            self.upper[0],
            self.lower[0],
            self.upper[1],
            self.lower[1],
            self.upper[2],
            self.lower[2],
        ]
    }

    pub fn all_off() -> Self {
        Self::default()
    }
}

/// Compares each clamped modulation signal with the carrier: the upper switch
/// conducts when the signal is above the carrier, the lower one otherwise.
pub fn spwm_switch_states(mv: [f64; 3], carrier_value: f64) -> GateSignals {
    let upper = mv.map(|m| m.clamp(-1.0, 1.0) > carrier_value);
    GateSignals {
        upper,
        lower: upper.map(|u| !u),
    }
}

/// Pole voltages referred to the DC-link midpoint.
pub fn inverter_bridge_voltage(gates: &GateSignals, v_dc: f64) -> Result<[f64; 3], SimError> {
    let mut out = [0.0; 3];
    for (phase, v) in out.iter_mut().enumerate() {
        if gates.upper[phase] && gates.lower[phase] {
            return Err(SimError::ShootThrough { phase });
        }
        *v = if gates.upper[phase] { 0.5 * v_dc } else { -0.5 * v_dc };
    }
    Ok(out)
}

/// Pole voltages when legs may be blanked: a leg with both switches open
/// conducts through the freewheeling diode selected by its current
/// (positive current out of the leg clamps it to the negative rail).
pub fn bridge_voltage_with_blanking(gates: &GateSignals, v_dc: f64, currents: [f64; 3]) -> Result<[f64; 3], SimError> {
    let mut out = [0.0; 3];
    for (phase, v) in out.iter_mut().enumerate() {
        let (up, low) = (gates.upper[phase], gates.lower[phase]);
        *v = match (up, low) {
            (true, true) => return Err(SimError::ShootThrough { phase }),
            (true, false) => 0.5 * v_dc,
            (false, true) => -0.5 * v_dc,
            (false, false) if currents[phase] > 0.0 => -0.5 * v_dc,
            (false, false) => 0.5 * v_dc,
        };
    }
    Ok(out)
}

/// Stateful modulator that inserts a dead time of whole simulation steps
/// whenever a leg commutates.
#[derive(Debug, Clone)]
pub struct Modulator {
    blank_steps: u32,
    commanded: [Option<bool>; 3],
    remaining: [u32; 3],
}

impl Modulator {
    pub fn new(cfg: &SpwmConfig, sim_step: f64) -> Self {
        let blank_steps = if cfg.dead_time > 0.0 {
            (cfg.dead_time / sim_step - 1e-9).ceil().max(1.0) as u32
        } else {
            0
        };
        Self {
            blank_steps,
            commanded: [None; 3],
            remaining: [0; 3],
        }
    }

    pub fn reset(&mut self) {
        self.commanded = [None; 3];
        self.remaining = [0; 3];
    }

    pub fn gates(&mut self, mv: [f64; 3], carrier_value: f64) -> GateSignals {
        let ideal = spwm_switch_states(mv, carrier_value);
        if self.blank_steps == 0 {
            return ideal;
        }
        let mut out = GateSignals::all_off();
        for p in 0..3 {
            let want = ideal.upper[p];
            match self.commanded[p] {
                Some(prev) if prev != want => self.remaining[p] = self.blank_steps,
                None => self.remaining[p] = 0,
                _ => {}
            }
            self.commanded[p] = Some(want);
            if self.remaining[p] > 0 {
                self.remaining[p] -= 1;
            } else {
                out.upper[p] = want;
                out.lower[p] = !want;
            }
        }
        out
    }
}

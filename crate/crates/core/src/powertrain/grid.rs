use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// Phase offsets of the a, b, c voltages in radians.
pub const PHASE_OFFSETS: [f64; 3] = [0.0, -TAU / 3.0, TAU / 3.0];

/// Ideal balanced three-phase source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSource {
    /// Phase-voltage peak in volts.
    pub amplitude: f64,
    /// Hertz.
    pub frequency: f64,
}

impl Default for GridSource {
    fn default() -> Self {
        Self {
            amplitude: 325.0,
            frequency: 50.0,
        }
    }
}

impl GridSource {
    pub fn angle(&self, t: f64) -> f64 {
        TAU * self.frequency * t
    }
}

/// Unit-amplitude balanced set at the grid angle for time `t`.
pub fn unit_sinusoids(src: &GridSource, t: f64) -> [f64; 3] {
    let theta = src.angle(t);
    PHASE_OFFSETS.map(|phi| (theta + phi).sin())
}

/// Instantaneous phase voltages `(v_a, v_b, v_c)`.
pub fn grid_voltages(src: &GridSource, t: f64) -> [f64; 3] {
    unit_sinusoids(src, t).map(|s| src.amplitude * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_origin() {
        let src = GridSource::default();
        let v = grid_voltages(&src, 0.0);
        let s120 = (TAU / 3.0).sin();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + s120 * 325.0).abs() < 1e-12);
        assert!((v[2] - s120 * 325.0).abs() < 1e-12);
        assert!((v[1] / 325.0 + 0.8660254).abs() < 1e-7);
    }

    #[test]
    fn quarter_period_peak() {
        let v = grid_voltages(&GridSource::default(), 5e-3);
        assert!((v[0] - 325.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_sum_is_zero() {
        let src = GridSource::default();
        for k in 0..2000 {
            let v = grid_voltages(&src, k as f64 * 13.7e-6);
            assert!((v[0] + v[1] + v[2]).abs() < 1e-9);
        }
    }
}

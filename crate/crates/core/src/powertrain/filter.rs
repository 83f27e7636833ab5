//! Three-phase LCL output filter between the bridge and the grid.
//!
//! Each phase carries the states `[i1, v_cap, i2]`: inverter-side inductor
//! current, capacitor voltage and grid-side inductor current. The capacitor
//! branch has a series damping resistor and both inductors a winding
//! resistance. The filter star point is tied to the DC-link midpoint.
//!
//! Inputs are the three bridge pole voltages followed by the three grid EMFs.
//! Outputs are nine rows: the filter node voltages `v_cap + Rd (i1 - i2)`,
//! then the inverter-side currents, then the grid-side currents.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lti::{ContinuousStateSpace, LtiError};

/// Bridge voltages then grid voltages.
pub const FILTER_INPUTS: usize = 6;
/// Node voltages, inverter-side currents, grid-side currents.
pub const FILTER_OUTPUTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LclParams {
    pub l1: f64,
    pub c: f64,
    pub l2: f64,
    pub r_damp: f64,
    pub r_l: f64,
}

impl Default for LclParams {
    fn default() -> Self {
        Self {
            l1: 6e-3,
            c: 150e-6,
            l2: 6e-3,
            r_damp: 1.0,
            r_l: 0.05,
        }
    }
}

impl LclParams {
    /// Undamped resonance `sqrt((L1 + L2) / (L1 L2 C)) / 2 pi`.
    pub fn resonance_hz(&self) -> f64 {
        ((self.l1 + self.l2) / (self.l1 * self.l2 * self.c)).sqrt() / TAU
    }

    fn phase_block(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let (l1, c, l2, rd, rl) = (self.l1, self.c, self.l2, self.r_damp, self.r_l);
        let a = [
            [-(rd + rl) / l1, -1.0 / l1, rd / l1],
            [1.0 / c, 0.0, -1.0 / c],
            [rd / l2, 1.0 / l2, -(rd + rl) / l2],
        ];
        let c_node = [rd, 1.0, -rd];
        (a, c_node)
    }
}

/// Filter plant in continuous time, with the full output set.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl FilterPlant {
    pub fn from_lcl(p: &LclParams) -> Self {
        let (blk, c_node) = p.phase_block();
        let mut a = DMatrix::zeros(9, 9);
        let mut b = DMatrix::zeros(9, FILTER_INPUTS);
        let mut c = DMatrix::zeros(FILTER_OUTPUTS, 9);
        for ph in 0..3 {
            let o = 3 * ph;
            for i in 0..3 {
                for j in 0..3 {
                    a[(o + i, o + j)] = blk[i][j];
                }
                c[(ph, o + i)] = c_node[i];
            }
            b[(o, ph)] = 1.0 / p.l1;
            b[(o + 2, 3 + ph)] = -1.0 / p.l2;
            c[(3 + ph, o)] = 1.0;
            c[(6 + ph, o + 2)] = 1.0;
        }
        Self { a, b, c }
    }

    pub fn from_matrices(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, LtiError> {
        if b.ncols() != FILTER_INPUTS {
            return Err(LtiError::DimensionMismatch {
                what: "B",
                expected: format!("{} columns", FILTER_INPUTS),
                found: format!("{} columns", b.ncols()),
            });
        }
        if c.nrows() != FILTER_OUTPUTS {
            return Err(LtiError::DimensionMismatch {
                what: "C",
                expected: format!("{} rows", FILTER_OUTPUTS),
                found: format!("{} rows", c.nrows()),
            });
        }
        // reuse the state-space validation for shape and finiteness
        ContinuousStateSpace::new(a.clone(), b.clone(), c.rows(0, 3).into_owned())?;
        if c.ncols() != a.nrows() {
            return Err(LtiError::DimensionMismatch {
                what: "C",
                expected: format!("{} columns", a.nrows()),
                found: format!("{} columns", c.ncols()),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("C"));
        }
        Ok(Self { a, b, c })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c_full(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// All six inputs, node voltages as outputs. Used for exact stepping.
    pub fn physical_model(&self) -> Result<ContinuousStateSpace, LtiError> {
        ContinuousStateSpace::new(self.a.clone(), self.b.clone(), self.c.rows(0, 3).into_owned())
    }

    /// Model seen by the controller: normalized modulation commands in,
    /// node voltages out. A modulation of `m` produces an average pole
    /// voltage of `m v_dc / 2`.
    pub fn mpc_model(&self, v_dc_nominal: f64) -> Result<ContinuousStateSpace, LtiError> {
        let b = self.b.columns(0, 3) * (0.5 * v_dc_nominal);
        ContinuousStateSpace::new(self.a.clone(), b, self.c.rows(0, 3).into_owned())
    }
}

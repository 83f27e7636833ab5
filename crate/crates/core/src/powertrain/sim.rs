//! The fixed-step simulation loop.
//!
//! Every step the bridge voltage is held constant and the filter advances by
//! its exact discrete transition at the simulation step. Every controller
//! sample the supervisor picks the operating mode and, in V2G, the modulation
//! command is refreshed either by the predictive controller or by a fixed
//! unit-amplitude sinusoid.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::battery::Battery;
use super::grid::{grid_voltages, unit_sinusoids};
use super::spwm::{bridge_voltage_with_blanking, Modulator};
use super::SimError;
use crate::lti::{augment, discretize};
use crate::mpc::{MpcController, MpcState};
use crate::scenario::Scenario;
use crate::supervisor::{compute_x, decide_mode, Mode};

/// Time-series columns, in file order.
pub const COLUMNS: [&str; 22] = [
    "t", "v_ga", "v_gb", "v_gc", "v_ia", "v_ib", "v_ic", "i_ia", "i_ib", "i_ic", "v_bridge_a", "v_bridge_b", "v_bridge_c",
    "v_dc", "soc", "mode_c", "mv_a", "mv_b", "mv_c", "i_ga", "i_gb", "i_gc",
];

const COL_T: usize = 0;
const COL_VG: usize = 1;
const COL_VI: usize = 4;
const COL_II: usize = 7;
const COL_VB: usize = 10;
const COL_VDC: usize = 13;
const COL_SOC: usize = 14;
const COL_MODE: usize = 15;
const COL_MV: usize = 16;
const COL_IG: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeTransition {
    pub t: f64,
    pub c: u8,
    /// Open-circuit voltage the decision was based on.
    pub v_oc: f64,
    /// Load minus source power at the decision.
    pub x: f64,
}

/// Energy totals in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    /// Energy leaving the battery terminals while inverting.
    pub v2g_battery_out: f64,
    /// Energy delivered past the grid-side inductor while inverting.
    pub v2g_grid_delivered: f64,
    /// Energy accepted by the battery while charging.
    pub g2v_battery_in: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcTraceRow {
    pub t: f64,
    pub mv: [f64; 3],
    pub du: [f64; 3],
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub record_mpc_trace: bool,
}

/// Recorded simulation output, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_period: f64,
    columns: Vec<Vec<f64>>,
    pub transitions: Vec<ModeTransition>,
    pub energy: EnergyLedger,
    pub mpc_trace: Vec<MpcTraceRow>,
}

impl TimeSeries {
    pub fn new(sample_period: f64, capacity: usize) -> Self {
        Self {
            sample_period,
            columns: (0..COLUMNS.len()).map(|_| Vec::with_capacity(capacity)).collect(),
            transitions: Vec::new(),
            energy: EnergyLedger::default(),
            mpc_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        COLUMNS.iter().position(|c| *c == name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    pub fn row(&self, k: usize) -> [f64; 22] {
        std::array::from_fn(|i| self.columns[i][k])
    }

    /// Appends one row in `COLUMNS` order.
    pub fn push_row(&mut self, row: &[f64; 22]) {
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(*v);
        }
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_period
    }
}

fn build_controller(sc: &Scenario, plant: &super::FilterPlant) -> Result<MpcController, SimError> {
    let v_dc_nominal = sc.battery.soc0 * sc.battery.v_rated;
    let model = discretize(&plant.mpc_model(v_dc_nominal)?, sc.mpc.t_s)?;
    let ctl = MpcController::new(&augment(&model), sc.mpc.config(), sc.mpc.regularize)?;
    Ok(if sc.mpc.anti_windup { ctl.with_input_limit(1.0)? } else { ctl })
}

pub fn simulate_scenario(sc: &Scenario) -> Result<TimeSeries, SimError> {
    simulate_with(sc, SimOptions::default())
}

pub fn simulate_with(sc: &Scenario, opts: SimOptions) -> Result<TimeSeries, SimError> {
    sc.validate()?;
    let plant = sc.plant.build()?;
    let h = sc.sim.step;
    let ratio = sc.control_ratio();
    let n_steps = sc.n_steps();
    let log_every = sc.sim.log_every;

    let phys = discretize(&plant.physical_model()?, h)?;
    let g = phys.g().clone();
    let hu: DMatrix<f64> = phys.h().clone();
    let c_full = plant.c_full().clone();
    let ns = plant.n_states();

    let controller = if sc.mpc.enabled { Some(build_controller(sc, &plant)?) } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.sim.seed);
    let noise = if sc.sim.meas_noise > 0.0 {
        Some(Normal::new(0.0, sc.sim.meas_noise).expect("validated noise level"))
    } else {
        None
    };

    let b = &sc.battery;
    let mut battery = Battery::new(b.v_rated, b.capacity_ah, b.soc0, b.r_int);
    let mut x = DVector::<f64>::zeros(ns);
    let mut x_next = DVector::<f64>::zeros(ns);
    let mut y = DVector::<f64>::zeros(c_full.nrows());
    let mut y_end = DVector::<f64>::zeros(c_full.nrows());
    let mut u = DVector::<f64>::zeros(6);
    let mut modulator = Modulator::new(&sc.spwm, h);
    let mut mode: Option<Mode> = None;
    let mut mpc_state: Option<MpcState> = None;
    let mut mv = [0.0; 3];

    let mut ts = TimeSeries::new(h * log_every as f64, n_steps / log_every + 1);

    for k in 0..n_steps {
        let t = k as f64 * h;
        let vg = grid_voltages(&sc.grid, t);
        y.gemv(1.0, &c_full, &x, 0.0);

        if k % ratio == 0 {
            let p_x = compute_x(sc.profiles.p_load.at(t), sc.profiles.p_source.at(t));
            let v_oc = battery.open_circuit_voltage();
            let decision = decide_mode(p_x, v_oc, b.v_rated, sc.supervisor.hysteresis, mode.unwrap_or(Mode::G2V))?;
            if mode != Some(decision.mode) {
                log::debug!("t = {t:.6} s: mode c = {} (V_oc = {v_oc:.3} V)", decision.c());
                ts.transitions.push(ModeTransition {
                    t,
                    c: decision.c(),
                    v_oc,
                    x: p_x,
                });
                match decision.mode {
                    Mode::V2G => {
                        let y_v = DVector::from_fn(3, |i, _| y[i]);
                        mpc_state = Some(MpcState::new(x.clone(), DVector::zeros(3), y_v));
                    }
                    Mode::G2V => {
                        x.fill(0.0);
                        y.fill(0.0);
                        modulator.reset();
                        mv = [0.0; 3];
                    }
                }
                mode = Some(decision.mode);
            }
            if decision.mode == Mode::V2G {
                mv = match (&controller, mpc_state.as_mut()) {
                    (Some(ctl), Some(state)) => {
                        let mut y_meas = DVector::from_fn(3, |i, _| y[i]);
                        if let Some(n) = &noise {
                            for v in y_meas.iter_mut() {
                                *v += n.sample(&mut rng);
                            }
                        }
                        let r = DVector::from_column_slice(&vg);
                        let (mv_k, next) = ctl.update(state, &y_meas, &x, &r)?;
                        *state = next;
                        if opts.record_mpc_trace {
                            ts.mpc_trace.push(MpcTraceRow {
                                t,
                                mv: [mv_k.mv[0], mv_k.mv[1], mv_k.mv[2]],
                                du: [mv_k.du[0], mv_k.du[1], mv_k.du[2]],
                                cost: mv_k.cost,
                            });
                        }
                        [mv_k.mv[0], mv_k.mv[1], mv_k.mv[2]]
                    }
                    _ => unit_sinusoids(&sc.grid, t),
                };
            }
        }

        let record = k % log_every == 0;
        match mode.expect("mode decided at k = 0") {
            Mode::V2G => {
                let gates = modulator.gates(mv, sc.spwm.carrier_value(t));
                let i1 = [y[3], y[4], y[5]];
                let v_dc = battery.v_dc;
                let vp = bridge_voltage_with_blanking(&gates, v_dc, i1)?;
                if record {
                    let mut row = [0.0; 22];
                    row[COL_T] = t;
                    row[COL_VG..COL_VG + 3].copy_from_slice(&vg);
                    row[COL_VI..COL_VI + 3].copy_from_slice(&y.as_slice()[0..3]);
                    row[COL_II..COL_II + 3].copy_from_slice(&i1);
                    row[COL_VB..COL_VB + 3].copy_from_slice(&vp);
                    row[COL_VDC] = v_dc;
                    row[COL_SOC] = battery.soc;
                    row[COL_MODE] = 1.0;
                    row[COL_MV..COL_MV + 3].copy_from_slice(&mv.map(|m| m.clamp(-1.0, 1.0)));
                    row[COL_IG..COL_IG + 3].copy_from_slice(&y.as_slice()[6..9]);
                    ts.push_row(&row);
                }

                for j in 0..3 {
                    u[j] = vp[j];
                    u[3 + j] = vg[j];
                }
                x_next.gemv(1.0, &g, &x, 0.0);
                x_next.gemv(1.0, &hu, &u, 1.0);
                std::mem::swap(&mut x, &mut x_next);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::Diverged { t });
                }

                // trapezoidal averages over the step
                y_end.gemv(1.0, &c_full, &x, 0.0);
                let vg_end = grid_voltages(&sc.grid, t + h);
                let mut p_bridge = 0.0;
                let mut p_grid = 0.0;
                for j in 0..3 {
                    p_bridge += vp[j] * 0.5 * (y[3 + j] + y_end[3 + j]);
                    p_grid += 0.5 * (vg[j] * y[6 + j] + vg_end[j] * y_end[6 + j]);
                }
                let i_dc = if v_dc > 0.0 { p_bridge / v_dc } else { 0.0 };
                ts.energy.v2g_battery_out += p_bridge * h;
                ts.energy.v2g_grid_delivered += p_grid * h;
                battery = battery.step(i_dc, h);
            }
            Mode::G2V => {
                let v_dc = battery.v_dc;
                if record {
                    let p = v_dc * b.charge_current;
                    let draw = -2.0 * p / (3.0 * sc.grid.amplitude);
                    let i_g = unit_sinusoids(&sc.grid, t).map(|s| draw * s);
                    let mut row = [0.0; 22];
                    row[COL_T] = t;
                    row[COL_VG..COL_VG + 3].copy_from_slice(&vg);
                    row[COL_VDC] = v_dc;
                    row[COL_SOC] = battery.soc;
                    row[COL_IG..COL_IG + 3].copy_from_slice(&i_g);
                    ts.push_row(&row);
                }
                ts.energy.g2v_battery_in += v_dc * b.charge_current * h;
                battery = battery.step(-b.charge_current, h);
            }
        }
    }
    Ok(ts)
}

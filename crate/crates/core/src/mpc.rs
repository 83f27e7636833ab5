//! Unconstrained receding-horizon controller on the incremental model.
//!
//! Over a prediction horizon of `np` samples the stacked outputs are
//! `Y = F x + Phi dU`, where `x = [dx; y]` is the augmented state and `dU`
//! stacks `nc` input moves. Minimizing
//! `J = (Rs - Y)'(Rs - Y) + r_w dU'dU` gives
//! `dU* = (Phi'Phi + r_w I)^-1 Phi'(Rs - F x)`, and only the first move of
//! `dU*` is applied before the problem is solved again at the next sample.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::AugmentedModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("prediction horizon must be at least 1")]
    ZeroPredictionHorizon,
    #[error("control horizon {nc} must satisfy 1 <= nc <= np = {np}")]
    InvalidControlHorizon { np: usize, nc: usize },
    #[error("move weight r_w must be finite and >= 0, got {0}")]
    InvalidWeight(f64),
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidSamplePeriod(f64),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("normal matrix Phi'Phi + r_w I is singular and regularization is disabled")]
    SingularNormalMatrix,
    #[error("input limit must be positive and finite, got {0}")]
    InvalidInputLimit(f64),
}

fn check_len(v: &DVector<f64>, n: usize, what: &'static str) -> Result<(), MpcError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(MpcError::DimensionMismatch {
            what,
            expected: n,
            found: v.len(),
        })
    }
}

/// Horizons, move weight and sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub np: usize,
    pub nc: usize,
    pub r_w: f64,
    pub ts: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            np: 10,
            nc: 3,
            r_w: 0.0,
            ts: 10e-6,
        }
    }
}

impl MpcConfig {
    pub fn new(np: usize, nc: usize, r_w: f64, ts: f64) -> Result<Self, MpcError> {
        let cfg = Self { np, nc, r_w, ts };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.np == 0 {
            return Err(MpcError::ZeroPredictionHorizon);
        }
        if self.nc == 0 || self.nc > self.np {
            return Err(MpcError::InvalidControlHorizon {
                np: self.np,
                nc: self.nc,
            });
        }
        if !(self.r_w.is_finite() && self.r_w >= 0.0) {
            return Err(MpcError::InvalidWeight(self.r_w));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(MpcError::InvalidSamplePeriod(self.ts));
        }
        Ok(())
    }

    /// Length of the optimization window in seconds.
    pub fn horizon_duration(&self) -> f64 {
        self.np as f64 * self.ts
    }
}

/// Free-response (`F`) and forced-response (`Phi`) matrices of the stacked prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub f: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    q: usize,
    m: usize,
}

impl PredictionMatrices {
    pub fn n_outputs(&self) -> usize {
        self.q
    }

    pub fn n_inputs(&self) -> usize {
        self.m
    }

    pub fn prediction_horizon(&self) -> usize {
        self.f.nrows() / self.q.max(1)
    }

    pub fn control_horizon(&self) -> usize {
        self.phi.ncols() / self.m.max(1)
    }

    /// `Y = F x + Phi dU`.
    pub fn predict(&self, x_aug: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>, MpcError> {
        check_len(x_aug, self.f.ncols(), "augmented state")?;
        check_len(du, self.phi.ncols(), "move vector")?;
        Ok(&self.f * x_aug + &self.phi * du)
    }
}

/// Row block `i` of `F` is `Cm Gm^(i+1)`; block `(i, j)` of `Phi` is
/// `Cm Gm^(i-j) Hm` on and below the block diagonal.
pub fn build_prediction_matrices(
    aug: &AugmentedModel,
    cfg: &MpcConfig,
) -> Result<PredictionMatrices, MpcError> {
    cfg.validate()?;
    let n = aug.n_states();
    let m = aug.n_inputs();
    let q = aug.n_outputs();
    let (np, nc) = (cfg.np, cfg.nc);

    // cm_pow[i] = Cm Gm^i for i in 0..=np
    let mut cm_pow = Vec::with_capacity(np + 1);
    cm_pow.push(aug.cm.clone());
    for i in 0..np {
        let next = &cm_pow[i] * &aug.gm;
        cm_pow.push(next);
    }
    let markov: Vec<DMatrix<f64>> = cm_pow.iter().take(np).map(|c| c * &aug.hm).collect();

    let mut f = DMatrix::zeros(q * np, n);
    let mut phi = DMatrix::zeros(q * np, m * nc);
    for i in 0..np {
        f.view_mut((i * q, 0), (q, n)).copy_from(&cm_pow[i + 1]);
        for j in 0..nc.min(i + 1) {
            phi.view_mut((i * q, j * m), (q, m)).copy_from(&markov[i - j]);
        }
    }
    Ok(PredictionMatrices { f, phi, q, m })
}

/// Stacks the reference `np` times.
pub fn build_setpoint_vector(r: &DVector<f64>, cfg: &MpcConfig) -> DVector<f64> {
    let q = r.len();
    DVector::from_fn(q * cfg.np, |i, _| r[i % q])
}

/// `J = |Rs - Y|^2 + r_w |dU|^2` with `Y = F x + Phi dU`.
pub fn evaluate_cost(
    pm: &PredictionMatrices,
    r_w: f64,
    x_aug: &DVector<f64>,
    rs: &DVector<f64>,
    du: &DVector<f64>,
) -> Result<f64, MpcError> {
    check_len(rs, pm.f.nrows(), "set-point vector")?;
    let y = pm.predict(x_aug, du)?;
    let e = rs - y;
    Ok(e.norm_squared() + r_w * du.norm_squared())
}

// Relative pivot floor below which the normal matrix counts as singular.
const PIVOT_FLOOR: f64 = 1e-14;

fn factorize(normal: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = normal.diagonal().iter().fold(0.0, |a: f64, b| a.max(b.abs()));
    if !(scale > 0.0) {
        return None;
    }
    let chol = Cholesky::new(normal)?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > PIVOT_FLOOR * scale
    });
    ok.then_some(chol)
}

/// Factorized `Phi'Phi + r_w I`, reusable across samples.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    chol: Cholesky<f64, Dyn>,
    regularization: Option<f64>,
}

impl NormalEquations {
    /// With `allow_regularization`, a failed factorization is retried once
    /// with `eps I` added, `eps = 1e-10 trace(Phi'Phi) / rows`.
    pub fn new(pm: &PredictionMatrices, r_w: f64, allow_regularization: bool) -> Result<Self, MpcError> {
        if !(r_w.is_finite() && r_w >= 0.0) {
            return Err(MpcError::InvalidWeight(r_w));
        }
        let ptp = pm.phi.transpose() * &pm.phi;
        let dim = ptp.nrows();
        let mut normal = ptp.clone();
        for i in 0..dim {
            normal[(i, i)] += r_w;
        }
        if let Some(chol) = factorize(normal.clone()) {
            return Ok(Self {
                chol,
                regularization: None,
            });
        }
        if !allow_regularization {
            return Err(MpcError::SingularNormalMatrix);
        }
        let eps = 1e-10 * ptp.trace() / dim.max(1) as f64;
        for i in 0..dim {
            normal[(i, i)] += eps;
        }
        warn!("normal matrix factorization failed; retrying with Tikhonov term {eps:e}");
        match factorize(normal) {
            Some(chol) => Ok(Self {
                chol,
                regularization: Some(eps),
            }),
            None => Err(MpcError::SingularNormalMatrix),
        }
    }

    /// The Tikhonov term that was added, if the plain factorization failed.
    pub fn regularization(&self) -> Option<f64> {
        self.regularization
    }

    pub fn solve(
        &self,
        pm: &PredictionMatrices,
        x_aug: &DVector<f64>,
        rs: &DVector<f64>,
    ) -> Result<DVector<f64>, MpcError> {
        check_len(x_aug, pm.f.ncols(), "augmented state")?;
        check_len(rs, pm.f.nrows(), "set-point vector")?;
        let rhs = pm.phi.tr_mul(&(rs - &pm.f * x_aug));
        Ok(self.chol.solve(&rhs))
    }
}

/// `dU* = (Phi'Phi + r_w I)^-1 Phi'(Rs - F x)`.
///
/// Falls back to a Tikhonov-regularized solve if the normal matrix cannot be
/// factorized; use [`NormalEquations::new`] with `allow_regularization = false`
/// to get [`MpcError::SingularNormalMatrix`] instead.
pub fn solve_optimal_du(
    pm: &PredictionMatrices,
    r_w: f64,
    x_aug: &DVector<f64>,
    rs: &DVector<f64>,
) -> Result<DVector<f64>, MpcError> {
    NormalEquations::new(pm, r_w, true)?.solve(pm, x_aug, rs)
}

/// Controller memory between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcState {
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub y_meas: DVector<f64>,
    pub k: u64,
}

impl MpcState {
    pub fn new(x0: DVector<f64>, u0: DVector<f64>, y0: DVector<f64>) -> Self {
        Self {
            x_prev: x0,
            u_prev: u0,
            y_meas: y0,
            k: 0,
        }
    }
}

/// What one controller update produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMove {
    /// Manipulated variable `u[k-1] + du[k]`.
    pub mv: DVector<f64>,
    /// Applied input increment.
    pub du: DVector<f64>,
    /// Cost of the optimal move sequence.
    pub cost: f64,
}

/// A controller bound to one plant model: prediction matrices and the
/// factorized normal matrix are computed once at construction.
#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: MpcConfig,
    pm: PredictionMatrices,
    normal: NormalEquations,
    input_limit: Option<f64>,
}

impl MpcController {
    pub fn new(aug: &AugmentedModel, cfg: MpcConfig, allow_regularization: bool) -> Result<Self, MpcError> {
        let pm = build_prediction_matrices(aug, &cfg)?;
        let normal = NormalEquations::new(&pm, cfg.r_w, allow_regularization)?;
        Ok(Self {
            cfg,
            pm,
            normal,
            input_limit: None,
        })
    }

    /// Clamp the accumulated input to `[-limit, limit]`. The applied increment
    /// is then `mv - u[k-1]`, which keeps the accumulator from winding up when
    /// the downstream actuator saturates.
    pub fn with_input_limit(mut self, limit: f64) -> Result<Self, MpcError> {
        if !(limit.is_finite() && limit > 0.0) {
            return Err(MpcError::InvalidInputLimit(limit));
        }
        self.input_limit = Some(limit);
        Ok(self)
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn prediction(&self) -> &PredictionMatrices {
        &self.pm
    }

    pub fn normal_equations(&self) -> &NormalEquations {
        &self.normal
    }

    /// Full optimal move sequence for an augmented state and reference.
    pub fn optimal_sequence(&self, x_aug: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>, MpcError> {
        check_len(r, self.pm.n_outputs(), "reference")?;
        let rs = build_setpoint_vector(r, &self.cfg);
        self.normal.solve(&self.pm, x_aug, &rs)
    }

    /// One receding-horizon step: builds `[x_meas - x_prev; y_meas]`, solves
    /// for the move sequence and applies its first `m` entries.
    pub fn update(
        &self,
        state: &MpcState,
        y_meas: &DVector<f64>,
        x_meas: &DVector<f64>,
        r: &DVector<f64>,
    ) -> Result<(ControlMove, MpcState), MpcError> {
        let m = self.pm.n_inputs();
        let q = self.pm.n_outputs();
        let n = self.pm.f.ncols() - q;
        check_len(x_meas, n, "plant state")?;
        check_len(&state.x_prev, n, "previous plant state")?;
        check_len(y_meas, q, "measured output")?;
        check_len(r, q, "reference")?;
        check_len(&state.u_prev, m, "previous input")?;

        let mut x_aug = DVector::zeros(n + q);
        x_aug.rows_mut(0, n).copy_from(&(x_meas - &state.x_prev));
        x_aug.rows_mut(n, q).copy_from(y_meas);

        let rs = build_setpoint_vector(r, &self.cfg);
        let du_seq = self.normal.solve(&self.pm, &x_aug, &rs)?;
        let cost = evaluate_cost(&self.pm, self.cfg.r_w, &x_aug, &rs, &du_seq)?;

        let mut du = du_seq.rows(0, m).into_owned();
        if let Some(limit) = self.input_limit {
            for i in 0..m {
                let target = (state.u_prev[i] + du[i]).clamp(-limit, limit);
                du[i] = target - state.u_prev[i];
            }
        }
        let mv = &state.u_prev + &du;

        let next = MpcState {
            x_prev: x_meas.clone(),
            u_prev: mv.clone(),
            y_meas: y_meas.clone(),
            k: state.k + 1,
        };
        Ok((ControlMove { mv, du, cost }, next))
    }
}

//! Scenario files: a TOML document describing grid, battery, filter plant,
//! modulator, power profiles, controller and simulation settings.
//!
//! Parsing is strict. Unknown keys are rejected and every invariant is checked
//! before a scenario is handed to the simulator. Errors carry the dotted path
//! of the offending field.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::LtiError;
use crate::mpc::MpcConfig;
use crate::powertrain::filter::{FilterPlant, LclParams, FILTER_INPUTS, FILTER_OUTPUTS};
use crate::powertrain::{GridSource, PowerProfile, SpwmConfig};

/// Scenario shipped with the crate.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.scenario");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

impl ScenarioError {
    /// Dotted field path, when the error concerns a field.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ScenarioError::Parse { path, .. } | ScenarioError::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub v_rated: f64,
    pub capacity_ah: f64,
    pub soc0: f64,
    pub r_int: f64,
    /// Constant charging current of the rectifier path, amperes.
    pub charge_current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

/// Either the LCL parameters or explicit state-space matrices, not both.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_damp: Option<f64>,
    /// Winding resistance of each inductor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<PlantMatrices>,
}

impl PlantSpec {
    pub fn from_lcl(p: &LclParams) -> Self {
        Self {
            l1: Some(p.l1),
            c: Some(p.c),
            l2: Some(p.l2),
            r_damp: Some(p.r_damp),
            r_l: Some(p.r_l),
            matrices: None,
        }
    }

    fn lcl(&self) -> Result<Option<LclParams>, ScenarioError> {
        let fields = [
            ("plant.l1", self.l1),
            ("plant.c", self.c),
            ("plant.l2", self.l2),
            ("plant.r_damp", self.r_damp),
            ("plant.r_l", self.r_l),
        ];
        let given = fields.iter().filter(|f| f.1.is_some()).count();
        if given == 0 {
            return Ok(None);
        }
        if self.matrices.is_some() {
            return Err(invalid("plant.matrices", "give either LCL parameters or explicit matrices, not both"));
        }
        let mut vals = [0.0; 5];
        for (i, (path, v)) in fields.iter().enumerate() {
            let v = match (v, *path) {
                (Some(v), _) => *v,
                (None, "plant.r_l") => 0.0,
                (None, _) => return Err(invalid(path, "missing field")),
            };
            let ok = if i < 3 { v.is_finite() && v > 0.0 } else { v.is_finite() && v >= 0.0 };
            if !ok {
                return Err(invalid(path, format!("out of range: {v}")));
            }
            vals[i] = v;
        }
        Ok(Some(LclParams {
            l1: vals[0],
            c: vals[1],
            l2: vals[2],
            r_damp: vals[3],
            r_l: vals[4],
        }))
    }

    /// Builds the filter plant described by this section.
    pub fn build(&self) -> Result<FilterPlant, ScenarioError> {
        if let Some(p) = self.lcl()? {
            return Ok(FilterPlant::from_lcl(&p));
        }
        let m = self
            .matrices
            .as_ref()
            .ok_or_else(|| invalid("plant", "needs l1, c, l2, r_damp or an explicit matrices table"))?;
        let a = to_matrix("plant.matrices.A", &m.a)?;
        let b = to_matrix("plant.matrices.B", &m.b)?;
        let c = to_matrix("plant.matrices.C", &m.c)?;
        let ns = a.nrows();
        if a.ncols() != ns {
            return Err(invalid("plant.matrices.A", format!("must be square, got {}x{}", ns, a.ncols())));
        }
        if b.nrows() != ns || b.ncols() != FILTER_INPUTS {
            return Err(invalid(
                "plant.matrices.B",
                format!("must be {ns}x{FILTER_INPUTS}, got {}x{}", b.nrows(), b.ncols()),
            ));
        }
        if c.nrows() != FILTER_OUTPUTS || c.ncols() != ns {
            return Err(invalid(
                "plant.matrices.C",
                format!("must be {FILTER_OUTPUTS}x{ns}, got {}x{}", c.nrows(), c.ncols()),
            ));
        }
        FilterPlant::from_matrices(a, b, c).map_err(|e: LtiError| invalid("plant.matrices", e.to_string()))
    }
}

fn to_matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ScenarioError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err(invalid(path, "matrix is empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != nc) {
        return Err(invalid(path, format!("row {i} has {} entries, expected {nc}", rows[i].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(path, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub p_load: PowerProfile,
    pub p_source: PowerProfile,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    #[serde(rename = "N_p")]
    pub n_p: usize,
    #[serde(rename = "N_c")]
    pub n_c: usize,
    pub r_w: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub enabled: bool,
    /// Clamp the accumulated modulation command to `[-1, 1]`.
    #[serde(default = "default_true")]
    pub anti_windup: bool,
    /// Allow a small Tikhonov term when the normal matrix is singular.
    #[serde(default)]
    pub regularize: bool,
}

impl MpcSection {
    pub fn config(&self) -> MpcConfig {
        MpcConfig {
            np: self.n_p,
            nc: self.n_c,
            r_w: self.r_w,
            ts: self.t_s,
        }
    }
}

fn default_log_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub step: f64,
    pub duration: f64,
    pub seed: u64,
    /// Standard deviation of the noise added to the controller's voltage
    /// measurement, volts.
    #[serde(default)]
    pub meas_noise: f64,
    /// Record every n-th step in the time series.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorSection {
    #[serde(default)]
    pub hysteresis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Highest harmonic included in THD figures.
    pub n_max: usize,
    /// Trailing fraction of the record treated as steady state.
    pub window_fraction: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            n_max: 200,
            window_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSource,
    pub battery: BatterySpec,
    pub plant: PlantSpec,
    pub spwm: SpwmConfig,
    pub profiles: Profiles,
    pub mpc: MpcSection,
    pub sim: SimSection,
    #[serde(default)]
    pub supervisor: SupervisorSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn positive(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite and >= 0, got {v}")))
    }
}

impl Scenario {
    /// Parses and validates TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let de = toml::Deserializer::new(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::Parse {
                path,
                message: e.into_inner().message().trim().to_string(),
            }
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    /// The bundled default scenario.
    pub fn bundled_default() -> Self {
        Self::from_toml_str(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    /// Number of simulation steps per controller sample.
    pub fn control_ratio(&self) -> usize {
        (self.mpc.t_s / self.sim.step).round() as usize
    }

    pub fn n_steps(&self) -> usize {
        (self.sim.duration / self.sim.step + 1e-9).floor() as usize
    }

    /// Sample rate of the recorded time series.
    pub fn log_sample_rate(&self) -> f64 {
        1.0 / (self.sim.step * self.sim.log_every as f64)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        positive("grid.amplitude", self.grid.amplitude)?;
        positive("grid.frequency", self.grid.frequency)?;

        let b = &self.battery;
        positive("battery.v_rated", b.v_rated)?;
        positive("battery.capacity_ah", b.capacity_ah)?;
        if !(0.0..=1.0).contains(&b.soc0) {
            return Err(invalid("battery.soc0", format!("must lie in [0, 1], got {}", b.soc0)));
        }
        non_negative("battery.r_int", b.r_int)?;
        non_negative("battery.charge_current", b.charge_current)?;

        self.plant.build()?;

        positive("spwm.carrier_hz", self.spwm.carrier_hz)?;
        if self.spwm.carrier_hz < 10.0 * self.grid.frequency {
            return Err(invalid(
                "spwm.carrier_hz",
                format!("must be at least 10x the grid frequency ({} Hz)", 10.0 * self.grid.frequency),
            ));
        }
        non_negative("spwm.dead_time", self.spwm.dead_time)?;
        if self.spwm.dead_time >= 0.5 / self.spwm.carrier_hz {
            return Err(invalid("spwm.dead_time", "must be shorter than half a carrier period"));
        }

        self.profiles
            .p_load
            .validate()
            .map_err(|e| invalid("profiles.p_load", e.to_string()))?;
        self.profiles
            .p_source
            .validate()
            .map_err(|e| invalid("profiles.p_source", e.to_string()))?;

        let m = &self.mpc;
        if m.n_p == 0 {
            return Err(invalid("mpc.N_p", "must be at least 1"));
        }
        if m.n_c == 0 || m.n_c > m.n_p {
            return Err(invalid("mpc.N_c", format!("must lie in 1..={} (N_p), got {}", m.n_p, m.n_c)));
        }
        non_negative("mpc.r_w", m.r_w)?;
        positive("mpc.T_s", m.t_s)?;

        let s = &self.sim;
        positive("sim.step", s.step)?;
        positive("sim.duration", s.duration)?;
        if s.step > m.t_s * (1.0 + 1e-12) {
            return Err(invalid("sim.step", format!("must not exceed mpc.T_s ({})", m.t_s)));
        }
        let ratio = m.t_s / s.step;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(invalid("mpc.T_s", format!("must be an integer multiple of sim.step, ratio is {ratio}")));
        }
        if self.n_steps() == 0 {
            return Err(invalid("sim.duration", "shorter than one step"));
        }
        non_negative("sim.meas_noise", s.meas_noise)?;
        if s.log_every == 0 {
            return Err(invalid("sim.log_every", "must be at least 1"));
        }

        non_negative("supervisor.hysteresis", self.supervisor.hysteresis)?;

        let a = &self.analysis;
        if a.n_max < 2 {
            return Err(invalid("analysis.n_max", "must be at least 2"));
        }
        if !(a.window_fraction > 0.0 && a.window_fraction <= 1.0) {
            return Err(invalid("analysis.window_fraction", "must lie in (0, 1]"));
        }
        if a.n_max as f64 * self.grid.frequency >= 0.5 * self.log_sample_rate() {
            return Err(invalid("analysis.n_max", "highest harmonic is above the Nyquist frequency of the record"));
        }
        Ok(())
    }
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_default_parses() {
        let sc = Scenario::bundled_default();
        assert_eq!(sc.mpc.t_s, 10e-6);
        assert_eq!(sc.mpc.n_p, 10);
        assert_eq!(sc.mpc.n_c, 3);
        assert_eq!(sc.mpc.r_w, 0.0);
        assert_eq!(sc.control_ratio(), 10);
        assert_eq!(sc.n_steps(), 500_000);
        assert!(sc.plant.build().unwrap().n_states() == 9);
    }

    #[test]
    fn serialization_round_trips() {
        let sc = Scenario::bundled_default();
        let text = sc.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);
    }

    fn with(edit: impl Fn(&mut toml::Table)) -> Result<Scenario, ScenarioError> {
        let mut t: toml::Table = DEFAULT_SCENARIO.parse().unwrap();
        edit(&mut t);
        Scenario::from_toml_str(&toml::to_string(&t).unwrap())
    }

    fn section<'a>(t: &'a mut toml::Table, name: &str) -> &'a mut toml::Table {
        t.get_mut(name).unwrap().as_table_mut().unwrap()
    }

    #[test]
    fn control_horizon_above_prediction_horizon() {
        let err = with(|t| {
            section(t, "mpc").insert("N_c".into(), toml::Value::Integer(11));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("mpc.N_c"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = with(|t| {
            section(t, "mpc").insert("Q_weight".into(), toml::Value::Float(1.0));
        })
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
        assert!(err.to_string().contains("Q_weight"), "{err}");
        assert!(err.field_path().unwrap().starts_with("mpc"), "{err}");
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = with(|t| {
            section(t, "sim").insert("step".into(), toml::Value::String("fast".into()));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("sim.step"));
    }

    #[test]
    fn timing_invariants() {
        let err = with(|t| {
            section(t, "sim").insert("step".into(), toml::Value::Float(3e-6));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("mpc.T_s"));
        let err = with(|t| {
            section(t, "sim").insert("step".into(), toml::Value::Float(2e-5));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("sim.step"));
        let err = with(|t| {
            section(t, "sim").insert("duration".into(), toml::Value::Float(0.0));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("sim.duration"));
    }

    #[test]
    fn carrier_must_exceed_grid() {
        let err = with(|t| {
            section(t, "spwm").insert("carrier_hz".into(), toml::Value::Float(400.0));
        })
        .unwrap_err();
        assert_eq!(err.field_path(), Some("spwm.carrier_hz"));
    }

    #[test]
    fn explicit_matrices_accepted() {
        let plant = Scenario::bundled_default().plant.build().unwrap();
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        let spec = PlantSpec {
            matrices: Some(PlantMatrices {
                a: rows(plant.a()),
                b: rows(plant.b()),
                c: rows(plant.c_full()),
            }),
            ..PlantSpec::default()
        };
        assert_eq!(spec.build().unwrap(), plant);

        let mut sc = Scenario::bundled_default();
        sc.plant = spec.clone();
        let text = sc.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);

        let mut both = spec;
        both.l1 = Some(1e-3);
        assert_eq!(both.build().unwrap_err().field_path(), Some("plant.matrices"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_scenario(Path::new("/nonexistent/x.scenario")).unwrap_err();
        assert!(matches!(err, ScenarioError::Io { .. }));
    }
}

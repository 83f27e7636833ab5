//! With/without-controller experiment: runs a scenario twice, writes the time
//! series and assembles the THD comparison table.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power_quality::{analyze_signal, estimate_frequency, improvement_percent, steady_state_start, QualityError};
use crate::powertrain::{simulate_with, SimError, SimOptions, TimeSeries, COLUMNS};
use crate::scenario::{Scenario, ScenarioError};

/// THD baselines below this (percent) are treated as distortion-free and get
/// no improvement figure.
pub const MIN_BASELINE_THD: f64 = 1e-6;

pub const WITHOUT_CSV: &str = "without_mpc.csv";
pub const WITH_CSV: &str = "with_mpc.csv";
pub const REPORT_JSON: &str = "report.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const TRACE_CSV: &str = "mpc_trace.csv";

/// The four compared quantities and the CSV column prefix of each.
pub const TABLE_SIGNALS: [(&str, &str); 4] = [
    ("grid voltage", "v_g"),
    ("grid current", "i_g"),
    ("inverter output voltage", "v_i"),
    ("inverter output current", "i_i"),
];

const PHASES: [char; 3] = ['a', 'b', 'c'];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(#[from] ScenarioError),
    #[error("simulation ({phase}): {source}")]
    Simulation {
        phase: &'static str,
        #[source]
        source: SimError,
    },
    #[error("analysis of {signal}: {source}")]
    Analysis {
        signal: String,
        #[source]
        source: QualityError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("refusing to write an empty time series to {0}")]
    EmptySeries(PathBuf),
}

impl RunError {
    /// Process exit code: 2 configuration, 3 simulation or analysis, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Simulation { source: SimError::Config(_), .. } => 2,
            RunError::Simulation { .. } | RunError::Analysis { .. } | RunError::EmptySeries(_) => 3,
            RunError::Io { .. } | RunError::Format { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub signal_name: String,
    pub thd_without_mpc: Option<f64>,
    pub thd_with_mpc: Option<f64>,
    pub improvement_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseThd {
    pub column: String,
    pub thd_without_mpc: Option<f64>,
    pub thd_with_mpc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub t: f64,
    pub c: u8,
    pub v_oc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisInfo {
    pub f0_hint: f64,
    pub n_max: usize,
    pub window_fraction: f64,
    pub window_start: f64,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// One row per compared quantity, worst phase.
    pub rows: Vec<TableRow>,
    /// Unfiltered bridge pole voltage, worst phase.
    pub raw_bridge_thd_without_mpc: Option<f64>,
    pub raw_bridge_thd_with_mpc: Option<f64>,
    /// Frequency of the inverter output voltage of phase a.
    pub grid_frequency_without_mpc: Option<f64>,
    pub grid_frequency_with_mpc: Option<f64>,
    /// RMS of `v_i - v_g` relative to the RMS of `v_g`, per phase.
    pub tracking_error_percent_without_mpc: Vec<Option<f64>>,
    pub tracking_error_percent_with_mpc: Vec<Option<f64>>,
    pub phases: Vec<PhaseThd>,
    pub mode_transition_log: Vec<TransitionEntry>,
    pub mode_transition_log_without_mpc: Vec<TransitionEntry>,
    pub analysis: AnalysisInfo,
}

impl ComparisonReport {
    pub fn row(&self, signal_name: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.signal_name == signal_name)
    }

    pub fn phase(&self, column: &str) -> Option<&PhaseThd> {
        self.phases.iter().find(|p| p.column == column)
    }
}

/// Both runs of one experiment.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub without_mpc: TimeSeries,
    pub with_mpc: TimeSeries,
    pub report: ComparisonReport,
}

/// Sample rate implied by a sampling period, snapped to an integer when the
/// period is the reciprocal of one, so rates recovered from a written time
/// column agree with the simulator's.
pub fn sample_rate_from_period(period: f64) -> f64 {
    let fs = 1.0 / period;
    let snapped = fs.round();
    if (fs - snapped).abs() <= 1e-6 * fs {
        snapped
    } else {
        fs
    }
}

/// THD of one steady-state window. A window with no fundamental (the
/// converter idle in that mode) yields `None`.
pub fn window_thd(name: &str, data: &[f64], fs: f64, f0: f64, n_max: usize) -> Result<Option<f64>, RunError> {
    match analyze_signal(name, data, fs, f0, n_max) {
        Ok(r) => Ok(Some(r.thd_percent)),
        Err(QualityError::UndefinedThd) => Ok(None),
        Err(source) => Err(RunError::Analysis {
            signal: name.to_string(),
            source,
        }),
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

struct RunSummary {
    phase_thd: Vec<(String, Option<f64>)>,
    frequency: Option<f64>,
    tracking: Vec<Option<f64>>,
}

fn summarize(ts: &TimeSeries, sc: &Scenario) -> Result<RunSummary, RunError> {
    let fs = sample_rate_from_period(ts.sample_period);
    let start = steady_state_start(ts.len(), sc.analysis.window_fraction);
    let f0 = sc.grid.frequency;
    let col = |name: &str| &ts.column(name).expect("known column")[start..];

    let mut phase_thd = Vec::new();
    for prefix in TABLE_SIGNALS.iter().map(|s| s.1).chain(["v_bridge_"]) {
        for p in PHASES {
            let name = format!("{prefix}{p}");
            let thd = window_thd(&name, col(&name), fs, f0, sc.analysis.n_max)?;
            phase_thd.push((name, thd));
        }
    }
    let frequency = estimate_frequency(col("v_ia"), fs).ok();
    let tracking = PHASES
        .iter()
        .map(|p| {
            let vi = col(&format!("v_i{p}"));
            let vg = col(&format!("v_g{p}"));
            let reference = rms(vg.iter().copied());
            if reference > 0.0 && vi.iter().any(|v| *v != 0.0) {
                Some(100.0 * rms(vi.iter().zip(vg).map(|(a, b)| a - b)) / reference)
            } else {
                None
            }
        })
        .collect();
    Ok(RunSummary {
        phase_thd,
        frequency,
        tracking,
    })
}

fn worst(s: &RunSummary, prefix: &str) -> Option<f64> {
    s.phase_thd
        .iter()
        .filter(|(n, _)| n.starts_with(prefix) && n.len() == prefix.len() + 1)
        .filter_map(|(_, v)| *v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

fn transitions(ts: &TimeSeries) -> Vec<TransitionEntry> {
    ts.transitions
        .iter()
        .map(|m| TransitionEntry {
            t: m.t,
            c: m.c,
            v_oc: m.v_oc,
        })
        .collect()
}

/// Builds the comparison table from the two runs of a scenario.
pub fn build_report(sc: &Scenario, without: &TimeSeries, with: &TimeSeries) -> Result<ComparisonReport, RunError> {
    let a = summarize(without, sc)?;
    let b = summarize(with, sc)?;
    let rows = TABLE_SIGNALS
        .iter()
        .map(|(label, prefix)| {
            let thd_without = worst(&a, prefix);
            let thd_with = worst(&b, prefix);
            let improvement = match (thd_without, thd_with) {
                (Some(w0), Some(w1)) if w0 > MIN_BASELINE_THD => improvement_percent(w0, w1).ok(),
                _ => None,
            };
            TableRow {
                signal_name: label.to_string(),
                thd_without_mpc: thd_without,
                thd_with_mpc: thd_with,
                improvement_percent: improvement,
            }
        })
        .collect();
    let phases = a
        .phase_thd
        .iter()
        .zip(&b.phase_thd)
        .map(|((name, w0), (_, w1))| PhaseThd {
            column: name.clone(),
            thd_without_mpc: *w0,
            thd_with_mpc: *w1,
        })
        .collect();
    Ok(ComparisonReport {
        rows,
        raw_bridge_thd_without_mpc: worst(&a, "v_bridge_"),
        raw_bridge_thd_with_mpc: worst(&b, "v_bridge_"),
        grid_frequency_without_mpc: a.frequency,
        grid_frequency_with_mpc: b.frequency,
        tracking_error_percent_without_mpc: a.tracking,
        tracking_error_percent_with_mpc: b.tracking,
        phases,
        mode_transition_log: transitions(with),
        mode_transition_log_without_mpc: transitions(without),
        analysis: AnalysisInfo {
            f0_hint: sc.grid.frequency,
            n_max: sc.analysis.n_max,
            window_fraction: sc.analysis.window_fraction,
            window_start: with.column("t").and_then(|t| t.get(steady_state_start(t.len(), sc.analysis.window_fraction))).copied().unwrap_or(0.0),
            sample_rate: sample_rate_from_period(with.sample_period),
        },
    })
}

/// Runs the scenario without and with the controller, everything else equal.
/// The two runs execute on separate threads.
pub fn run_experiment(sc: &Scenario, record_trace: bool) -> Result<RunOutput, RunError> {
    sc.validate()?;
    let mut off = sc.clone();
    off.mpc.enabled = false;
    let mut on = sc.clone();
    on.mpc.enabled = true;

    let (without, with) = std::thread::scope(|s| {
        let h = s.spawn(|| simulate_with(&off, SimOptions::default()));
        let with = simulate_with(&on, SimOptions { record_mpc_trace: record_trace });
        (h.join().expect("simulation thread panicked"), with)
    });
    let without = without.map_err(|source| RunError::Simulation {
        phase: "without controller",
        source,
    })?;
    let with = with.map_err(|source| RunError::Simulation {
        phase: "with controller",
        source,
    })?;
    let report = build_report(sc, &without, &with)?;
    Ok(RunOutput {
        without_mpc: without,
        with_mpc: with,
        report,
    })
}

/// Runs the experiment and writes every output file into `out_dir`.
pub fn run(sc: &Scenario, out_dir: &Path, record_trace: bool) -> Result<(ComparisonReport, Vec<PathBuf>), RunError> {
    let out = run_experiment(sc, record_trace)?;
    let paths = write_outputs(&out, out_dir)?;
    Ok((out.report, paths))
}

/// Decimal text for a sample: the shortest exact representation, padded to
/// at least ten significant digits.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:e}");
    let digits = s.split('e').next().unwrap_or("").bytes().filter(u8::is_ascii_digit).count();
    if digits >= 10 {
        s
    } else {
        format!("{v:.9e}")
    }
}

/// Writes a time series as CSV with the standard header.
pub fn write_time_series(ts: &TimeSeries, path: &Path) -> Result<(), RunError> {
    if ts.is_empty() {
        return Err(RunError::EmptySeries(path.to_path_buf()));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", COLUMNS.join(","))?;
        let mut line = String::with_capacity(512);
        for k in 0..ts.len() {
            line.clear();
            for (i, v) in ts.row(k).iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format_value(*v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

fn write_trace(ts: &TimeSeries, path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let fmt_err = |e: csv::Error| RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(["t", "mv_a", "mv_b", "mv_c", "du_a", "du_b", "du_c", "cost"]).map_err(fmt_err)?;
    for r in &ts.mpc_trace {
        let vals = [r.t, r.mv[0], r.mv[1], r.mv[2], r.du[0], r.du[1], r.du[2], r.cost];
        w.write_record(vals.iter().map(|v| format_value(*v))).map_err(fmt_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_comparison(report: &ComparisonReport, path: &Path) -> Result<(), RunError> {
    let fmt_err = |e: csv::Error| RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt_err)?;
    let opt = |v: Option<f64>| v.map(format_value).unwrap_or_default();
    w.write_record(["signal_name", "thd_without_mpc", "thd_with_mpc", "improvement_percent"]).map_err(fmt_err)?;
    for r in &report.rows {
        w.write_record([
            r.signal_name.clone(),
            opt(r.thd_without_mpc),
            opt(r.thd_with_mpc),
            opt(r.improvement_percent),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes both time series, the JSON report, the comparison table and, when
/// recorded, the controller trace. Returns the written paths.
pub fn write_outputs(out: &RunOutput, out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::new();

    let p = out_dir.join(WITHOUT_CSV);
    write_time_series(&out.without_mpc, &p)?;
    paths.push(p);
    let p = out_dir.join(WITH_CSV);
    write_time_series(&out.with_mpc, &p)?;
    paths.push(p);

    let p = out_dir.join(REPORT_JSON);
    let json = serde_json::to_string_pretty(&out.report).map_err(|e| RunError::Format {
        path: p.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&p, json + "\n").map_err(io_err(&p))?;
    paths.push(p);

    let p = out_dir.join(COMPARISON_CSV);
    write_comparison(&out.report, &p)?;
    paths.push(p);

    if !out.with_mpc.mpc_trace.is_empty() {
        let p = out_dir.join(TRACE_CSV);
        write_trace(&out.with_mpc, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// A time-series file read back from disk.
#[derive(Debug, Clone)]
pub struct CsvSeries {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvSeries {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample rate recovered from the `t` column.
    pub fn sample_rate(&self) -> Option<f64> {
        let t = self.column("t")?;
        if t.len() < 2 {
            return None;
        }
        let period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        (period > 0.0).then(|| sample_rate_from_period(period))
    }
}

pub fn read_csv(path: &Path) -> Result<CsvSeries, RunError> {
    let fmt_err = |message: String| RunError::Format {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut rd = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers: Vec<String> = rd.headers().map_err(|e| fmt_err(e.to_string()))?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| fmt_err(format!("row {}: `{field}` is not a number", line + 2)))?;
            columns[i].push(v);
        }
    }
    Ok(CsvSeries { headers, columns })
}

/// Result of analyzing one column of a written time series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnThd {
    pub column: String,
    pub thd_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvAnalysis {
    pub sample_rate: f64,
    pub window_start: f64,
    /// Zero-crossing frequency of `v_ia`, when present and periodic.
    pub frequency: Option<f64>,
    pub columns: Vec<ColumnThd>,
}

/// Analyzes the phase columns of a written time series over its trailing
/// `window_fraction`, the same way the report does.
pub fn analyze_csv(path: &Path, f0: f64, n_max: usize, window_fraction: f64) -> Result<CsvAnalysis, RunError> {
    let data = read_csv(path)?;
    if data.is_empty() {
        return Err(RunError::Format {
            path: path.to_path_buf(),
            message: "no samples".into(),
        });
    }
    let fs = data.sample_rate().ok_or_else(|| RunError::Format {
        path: path.to_path_buf(),
        message: "cannot derive a sample rate from the `t` column".into(),
    })?;
    let start = steady_state_start(data.len(), window_fraction);
    let mut columns = Vec::new();
    for name in &data.headers {
        let phase_col = TABLE_SIGNALS.iter().any(|(_, p)| name.len() == p.len() + 1 && name.starts_with(p))
            || name.starts_with("v_bridge_");
        if !phase_col {
            continue;
        }
        let col = &data.column(name).expect("header present")[start..];
        columns.push(ColumnThd {
            column: name.clone(),
            thd_percent: window_thd(name, col, fs, f0, n_max)?,
        });
    }
    let frequency = data.column("v_ia").and_then(|v| estimate_frequency(&v[start..], fs).ok());
    Ok(CsvAnalysis {
        sample_rate: fs,
        window_start: data.column("t").map_or(0.0, |t| t[start]),
        frequency,
        columns,
    })
}

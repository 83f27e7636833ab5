//! Harmonic analysis of sampled waveforms.
//!
//! Harmonic amplitudes are obtained by projecting the signal onto sine and
//! cosine at exact multiples of the fundamental, over a whole number of
//! fundamental periods, so a periodic signal produces no leakage and no
//! window is needed.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Harmonic count used when none is specified.
pub const DEFAULT_N_MAX: usize = 50;

/// Minimum number of whole fundamental periods a signal must span.
pub const MIN_PERIODS: usize = 5;

// Accept a refined fundamental only this close to the caller's hint.
const REFINE_WINDOW: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("signal spans {periods:.2} fundamental periods, need at least {MIN_PERIODS}")]
    TooShort { periods: f64 },
    #[error("harmonic {n_max} at {f0} Hz is not below the Nyquist frequency {nyquist} Hz")]
    Aliasing { n_max: usize, f0: f64, nyquist: f64 },
    #[error("invalid analysis parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("fundamental amplitude is zero, THD is undefined")]
    UndefinedThd,
    #[error("found {found} rising zero crossings, need at least 3")]
    InsufficientCrossings { found: usize },
    #[error("baseline THD must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

/// Harmonic content of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThdReport {
    pub signal_name: String,
    pub fundamental_frequency: f64,
    pub fundamental_amplitude: f64,
    /// Amplitudes of harmonics 2..=n_max, in that order.
    pub harmonic_amplitudes: Vec<f64>,
    pub thd_percent: f64,
}

impl ThdReport {
    pub fn n_max(&self) -> usize {
        self.harmonic_amplitudes.len() + 1
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), QualityError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(QualityError::InvalidParameter { name, value })
    }
}

/// Amplitudes `A_1..=A_n_max` of the harmonics of `f0`.
pub fn harmonic_spectrum(
    signal: &[f64],
    sample_rate: f64,
    f0: f64,
    n_max: usize,
) -> Result<Vec<f64>, QualityError> {
    positive("sample_rate", sample_rate)?;
    positive("f0", f0)?;
    if n_max == 0 {
        return Err(QualityError::InvalidParameter {
            name: "n_max",
            value: 0.0,
        });
    }
    let nyquist = sample_rate / 2.0;
    if n_max as f64 * f0 >= nyquist {
        return Err(QualityError::Aliasing { n_max, f0, nyquist });
    }
    let samples_per_period = sample_rate / f0;
    let periods = signal.len() as f64 / samples_per_period;
    // tolerate rounding when the length is meant to be an exact multiple
    let whole = (periods + 1e-9).floor();
    if whole < MIN_PERIODS as f64 {
        return Err(QualityError::TooShort { periods });
    }
    let n = ((whole * samples_per_period).round() as usize).min(signal.len());
    let window = &signal[..n];

    Ok((1..=n_max)
        .map(|h| project(window, TAU * h as f64 * f0 / sample_rate))
        .collect())
}

// Amplitude of the component at `omega` rad/sample, via a rotating phasor that is
// re-anchored to exact trigonometry every block to bound drift.
fn project(window: &[f64], omega: f64) -> f64 {
    const BLOCK: usize = 512;
    let (step_s, step_c) = omega.sin_cos();
    let mut acc_c = 0.0;
    let mut acc_s = 0.0;
    for (b, chunk) in window.chunks(BLOCK).enumerate() {
        let (mut s, mut c) = (omega * (b * BLOCK) as f64).sin_cos();
        let (mut blk_c, mut blk_s) = (0.0, 0.0);
        for &x in chunk {
            blk_c += x * c;
            blk_s += x * s;
            let c_next = c * step_c - s * step_s;
            s = s * step_c + c * step_s;
            c = c_next;
        }
        acc_c += blk_c;
        acc_s += blk_s;
    }
    2.0 * acc_c.hypot(acc_s) / window.len() as f64
}

/// Full harmonic report for one signal. The fundamental is refined from
/// `f0_hint` by zero-crossing analysis when the estimate lies within 5% of
/// the hint (switched waveforms with many crossings keep the hint).
pub fn analyze_signal(
    name: &str,
    signal: &[f64],
    sample_rate: f64,
    f0_hint: f64,
    n_max: usize,
) -> Result<ThdReport, QualityError> {
    positive("f0_hint", f0_hint)?;
    let f0 = match estimate_frequency(signal, sample_rate) {
        Ok(f) if (f - f0_hint).abs() <= REFINE_WINDOW * f0_hint => f,
        _ => f0_hint,
    };
    let amps = harmonic_spectrum(signal, sample_rate, f0, n_max)?;
    let fundamental = amps[0];
    if !(fundamental > 0.0) {
        return Err(QualityError::UndefinedThd);
    }
    let harmonic_power: f64 = amps[1..].iter().map(|a| a * a).sum();
    Ok(ThdReport {
        signal_name: name.to_string(),
        fundamental_frequency: f0,
        fundamental_amplitude: fundamental,
        harmonic_amplitudes: amps[1..].to_vec(),
        thd_percent: 100.0 * harmonic_power.sqrt() / fundamental,
    })
}

/// `100 sqrt(sum_{h=2..n_max} A_h^2) / A_1`.
pub fn thd_percent(signal: &[f64], sample_rate: f64, f0_hint: f64, n_max: usize) -> Result<f64, QualityError> {
    analyze_signal("", signal, sample_rate, f0_hint, n_max).map(|r| r.thd_percent)
}

/// Fundamental frequency from the mean spacing of rising zero crossings.
///
/// Crossings are located by linear interpolation after removing the mean.
/// After each crossing the detector re-arms only once the signal has dropped
/// below a tenth of its peak magnitude, so noise near zero is not counted twice.
pub fn estimate_frequency(signal: &[f64], sample_rate: f64) -> Result<f64, QualityError> {
    positive("sample_rate", sample_rate)?;
    if signal.len() < 2 {
        return Err(QualityError::InsufficientCrossings { found: 0 });
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let peak = signal.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(QualityError::InsufficientCrossings { found: 0 });
    }
    let band = 0.1 * peak;

    let mut armed = false;
    let mut first: Option<f64> = None;
    let mut last = 0.0;
    let mut count = 0usize;
    let mut prev = signal[0] - mean;
    for (i, &raw) in signal.iter().enumerate().skip(1) {
        let cur = raw - mean;
        if cur < -band {
            armed = true;
        }
        if armed && prev < 0.0 && cur >= 0.0 {
            let t = (i - 1) as f64 + prev / (prev - cur);
            if first.is_none() {
                first = Some(t);
            }
            last = t;
            count += 1;
            armed = false;
        }
        prev = cur;
    }
    match first {
        Some(t0) if count >= 3 => Ok((count - 1) as f64 * sample_rate / (last - t0)),
        _ => Err(QualityError::InsufficientCrossings { found: count }),
    }
}

/// Relative THD reduction in percent.
pub fn improvement_percent(thd_without: f64, thd_with: f64) -> Result<f64, QualityError> {
    if !(thd_without.is_finite() && thd_without > 0.0) {
        return Err(QualityError::NonPositiveBaseline(thd_without));
    }
    Ok(100.0 * (thd_without - thd_with) / thd_without)
}

/// First sample of the trailing `fraction` of a record of `len` samples.
pub fn steady_state_start(len: usize, fraction: f64) -> usize {
    let keep = ((len as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    len - keep.min(len)
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Piecewise-constant power profile given as `(t, watts)` breakpoints.
/// Each value holds from its breakpoint until the next one; before the first
/// breakpoint the first value applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerProfile {
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile needs at least one breakpoint")]
    Empty,
    #[error("breakpoint {0} is not finite")]
    NonFinite(usize),
    #[error("breakpoint {0} has negative time")]
    NegativeTime(usize),
    #[error("breakpoint {0} is not after the previous one")]
    Unsorted(usize),
}

impl PowerProfile {
    pub fn constant(watts: f64) -> Self {
        Self {
            points: vec![[0.0, watts]],
        }
    }

    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, ProfileError> {
        let p = Self { points };
        p.validate()?;
        Ok(p)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.points.is_empty() {
            return Err(ProfileError::Empty);
        }
        for (i, &[t, w]) in self.points.iter().enumerate() {
            if !(t.is_finite() && w.is_finite()) {
                return Err(ProfileError::NonFinite(i));
            }
            if t < 0.0 {
                return Err(ProfileError::NegativeTime(i));
            }
            if i > 0 && t <= self.points[i - 1][0] {
                return Err(ProfileError::Unsorted(i));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|p| p[0] <= t);
        self.points[idx.saturating_sub(1)][1]
    }
}

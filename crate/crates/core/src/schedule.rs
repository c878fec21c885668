//! Noise schedules: the linear β schedule shared by the translation and
//! rotation chains, and the tiny-noise schedule used to jitter translations
//! during refinement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("need at least 2 diffusion steps, got {0}")]
    TooFewSteps(usize),
    #[error("invalid beta range [{0}, {1}]: need 0 < beta_min <= beta_max < 1")]
    InvalidBetaRange(f64, f64),
    #[error("jitter timestep must be in 1..={max}, got {got}")]
    InvalidJitterStep { got: usize, max: usize },
}

/// Per-step coefficients of a discrete diffusion chain with `steps` states
/// indexed `0..steps`.
///
/// `alpha_bar[t] = Π_{s ≤ t} alpha[s]`, and `beta_tilde[t]` is the variance of
/// `q(x_{t−1} | x_t, x_0)` (zero at `t = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_min` to `beta_max` over `steps` entries.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(ScheduleError::InvalidBetaRange(beta_min, beta_max));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_tilde = (0..steps)
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t]
                }
            })
            .collect();
        Ok(NoiseSchedule {
            beta_min,
            beta_max,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    /// Rotation-chain concentration at state `t`.
    pub fn forward_eps2(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).unwrap()
    }
}

/// Initial noise coefficient of the refinement jitter schedule.
pub const ADJUST_BETA_START: f64 = 0.00003;
pub const ADJUST_BETA_END: f64 = 0.02;
pub const ADJUST_TRAIN_STEPS: usize = 1000;

/// Tiny-noise forward schedule applied only to translations during
/// refinement. `t_jitter` counts forward steps from the clean state, so
/// `t_jitter = 1` injects exactly `β_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_steps: usize,
    pub t_jitter: usize,
}

impl AdjustSchedule {
    pub fn new() -> Self {
        AdjustSchedule {
            beta_start: ADJUST_BETA_START,
            beta_end: ADJUST_BETA_END,
            train_steps: ADJUST_TRAIN_STEPS,
            t_jitter: 1,
        }
    }

    pub fn with_t_jitter(t_jitter: usize) -> Result<Self, ScheduleError> {
        let s = Self::new();
        if t_jitter == 0 || t_jitter > s.train_steps {
            return Err(ScheduleError::InvalidJitterStep {
                got: t_jitter,
                max: s.train_steps,
            });
        }
        Ok(AdjustSchedule { t_jitter, ..s })
    }

    fn beta_at(&self, s: usize) -> f64 {
        self.beta_start + (self.beta_end - self.beta_start) * s as f64 / (self.train_steps - 1) as f64
    }

    /// `ᾱ` after `t_jitter` forward steps.
    pub fn alpha_bar(&self) -> f64 {
        (0..self.t_jitter).map(|s| 1.0 - self.beta_at(s)).product()
    }

    /// Standard deviation of the injected translation noise.
    pub fn jitter_std(&self) -> f64 {
        (1.0 - self.alpha_bar()).sqrt()
    }
}

impl Default for AdjustSchedule {
    fn default() -> Self {
        Self::new()
    }
}

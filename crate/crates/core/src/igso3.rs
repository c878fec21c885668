//! Isotropic Gaussian distribution on SO(3).
//!
//! The rotation angle `ω ∈ [0, π]` has density
//!
//! ```text
//! f(ω) = (1 − cos ω)/π · Σ_l (2l+1) exp(−l(l+1) ε²) · sin((l+½)ω) / sin(ω/2)
//! ```
//!
//! and the axis is uniform on the sphere. Sampling goes through a tabulated
//! inverse CDF; for very small concentration the series is replaced by a
//! Gaussian in the tangent space, `v ~ N(0, 2ε² I)`, `R = exp(v)`.

use crate::rotmath::{exp_rotation, sample_uniform_axis, AxisAngle, Rotation};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const DEFAULT_SERIES_LEN: usize = 2000;
pub const DEFAULT_GRID: usize = 4096;
pub const MIN_GRID: usize = 256;
/// Concentrations are clamped from below to this value.
pub const EPS2_FLOOR: f64 = 1e-6;
/// Below this concentration sampling uses the tangent-space Gaussian.
pub const TANGENT_THRESHOLD: f64 = 1e-4;
const TERM_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Igso3Error {
    #[error("concentration must be positive, got {0}")]
    NonPositiveConcentration(f64),
    #[error("series length must be at least 1")]
    EmptySeries,
    #[error("angle grid needs at least {MIN_GRID} points, got {0}")]
    GridTooSmall(usize),
}

/// Truncated series value of the angle density at `omega`.
pub fn density(omega: f64, eps2: f64, series_len: usize) -> Result<f64, Igso3Error> {
    if !(eps2 > 0.0) {
        return Err(Igso3Error::NonPositiveConcentration(eps2));
    }
    if series_len == 0 {
        return Err(Igso3Error::EmptySeries);
    }
    Ok(series_density(omega, eps2, series_len))
}

fn series_density(omega: f64, eps2: f64, series_len: usize) -> f64 {
    let prefactor = (1.0 - omega.cos()) / PI;
    if prefactor == 0.0 {
        return 0.0;
    }
    let half = 0.5 * omega;
    let s_half = half.sin();
    let small = s_half.abs() < 1e-8;
    // sin((l+½)ω) by the three-term recurrence s_{l+1} = 2 cos ω s_l − s_{l−1}
    let two_cos = 2.0 * omega.cos();
    let mut s_prev = -s_half; // l = −1
    let mut s_cur = s_half; // l = 0
    let ratio_bound = if small { f64::INFINITY } else { 1.0 / s_half.abs() };
    let mut sum = 0.0;
    for l in 0..series_len {
        let lf = l as f64;
        let coeff = (2.0 * lf + 1.0) * (-lf * (lf + 1.0) * eps2).exp();
        let ratio = if small { 2.0 * lf + 1.0 } else { s_cur / s_half };
        sum += coeff * ratio;
        if l > 0 && coeff * (2.0 * lf + 1.0).min(ratio_bound) < TERM_CUTOFF {
            break;
        }
        let s_next = two_cos * s_cur - s_prev;
        s_prev = s_cur;
        s_cur = s_next;
    }
    // cancellation near ω = π can leave a tiny negative remainder
    (prefactor * sum).max(0.0)
}

/// Angle density of the tangent-space approximation (Maxwell with `σ² = 2ε²`).
fn tangent_density(omega: f64, eps2: f64) -> f64 {
    let s2 = 2.0 * eps2;
    (2.0 / PI).sqrt() * omega * omega / (s2 * s2.sqrt()) * (-omega * omega / (2.0 * s2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSampler {
    /// Inverse CDF over the tabulated series density.
    Table,
    /// `exp(v)` with `v ~ N(0, 2ε² I)`.
    Tangent,
}

/// Tabulated angle density and CDF for one concentration.
#[derive(Debug, Clone)]
pub struct IgSo3Table {
    eps2: f64,
    omega: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    norm_factor: f64,
    sampler: AngleSampler,
}

impl IgSo3Table {
    pub fn build(eps2: f64, n_omega: usize, series_len: usize) -> Result<Self, Igso3Error> {
        if !(eps2 > 0.0) {
            return Err(Igso3Error::NonPositiveConcentration(eps2));
        }
        if series_len == 0 {
            return Err(Igso3Error::EmptySeries);
        }
        if n_omega < MIN_GRID {
            return Err(Igso3Error::GridTooSmall(n_omega));
        }
        let eps2 = eps2.max(EPS2_FLOOR);
        let sampler = if eps2 < TANGENT_THRESHOLD {
            AngleSampler::Tangent
        } else {
            AngleSampler::Table
        };
        let h = PI / (n_omega - 1) as f64;
        let omega: Vec<f64> = (0..n_omega).map(|i| i as f64 * h).collect();
        let mut density: Vec<f64> = match sampler {
            AngleSampler::Table => omega
                .iter()
                .map(|&w| series_density(w, eps2, series_len).max(0.0))
                .collect(),
            AngleSampler::Tangent => omega.iter().map(|&w| tangent_density(w, eps2)).collect(),
        };
        let mut cdf = vec![0.0; n_omega];
        for i in 1..n_omega {
            cdf[i] = cdf[i - 1] + 0.5 * h * (density[i - 1] + density[i]);
        }
        let total = cdf[n_omega - 1];
        for (d, c) in density.iter_mut().zip(cdf.iter_mut()) {
            *d /= total;
            *c /= total;
        }
        cdf[n_omega - 1] = 1.0;
        Ok(IgSo3Table {
            eps2,
            omega,
            density,
            cdf,
            norm_factor: total,
            sampler,
        })
    }

    pub fn with_defaults(eps2: f64) -> Result<Self, Igso3Error> {
        Self::build(eps2, DEFAULT_GRID, DEFAULT_SERIES_LEN)
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    pub fn omega_grid(&self) -> &[f64] {
        &self.omega
    }

    /// Renormalized density values on the grid.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Trapezoid integral of the raw (truncated) density before renormalization.
    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    pub fn sampler(&self) -> AngleSampler {
        self.sampler
    }

    /// Tabulated CDF at `omega`, linearly interpolated.
    pub fn cdf_at(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        if omega >= PI {
            return 1.0;
        }
        let h = self.omega[1];
        let x = omega / h;
        let i = (x.floor() as usize).min(self.omega.len() - 2);
        let frac = x - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of [`cdf_at`](Self::cdf_at).
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let j = self.cdf.partition_point(|&c| c < u);
        if j == 0 {
            return 0.0;
        }
        if j >= self.cdf.len() {
            return PI;
        }
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.omega[j - 1] + frac * (self.omega[j] - self.omega[j - 1])
    }

    /// `E[ω]` by the trapezoid rule.
    pub fn mean_angle(&self) -> f64 {
        let h = self.omega[1];
        let f = |i: usize| self.omega[i] * self.density[i];
        (1..self.omega.len()).map(|i| 0.5 * h * (f(i - 1) + f(i))).sum()
    }

    pub fn sample_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.sampler {
            AngleSampler::Table => self.quantile(rng.random::<f64>()),
            AngleSampler::Tangent => self.sample_tangent(rng).norm().min(PI),
        }
    }

    fn sample_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let s = (2.0 * self.eps2).sqrt();
        Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * s
    }

    /// Draw from `IG_SO(3)(I, ε²)`.
    pub fn sample_rotation<R: Rng + ?Sized>(&self, rng: &mut R) -> Rotation {
        exp_rotation(&self.sample_axis_angle(rng))
    }

    /// Draw the perturbation as a rotation vector (angle ≤ π).
    pub fn sample_axis_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> AxisAngle {
        match self.sampler {
            AngleSampler::Table => {
                let omega = self.quantile(rng.random::<f64>());
                let axis = sample_uniform_axis(rng);
                AxisAngle(axis * omega)
            }
            AngleSampler::Tangent => {
                let v = self.sample_tangent(rng);
                let n = v.norm();
                if n > PI {
                    // wrap onto the canonical branch
                    AxisAngle(v * ((n - 2.0 * PI) / n))
                } else {
                    AxisAngle(v)
                }
            }
        }
    }

    /// Draw from `IG_SO(3)(mean, ε²)` as `mean · g`.
    pub fn sample_shifted<R: Rng + ?Sized>(&self, mean: &Rotation, rng: &mut R) -> Rotation {
        mean * &self.sample_rotation(rng)
    }
}

/// Tables shared across a diffusion run, keyed by the exact bit pattern of ε².
#[derive(Debug, Default)]
pub struct TableCache {
    n_omega: usize,
    series_len: usize,
    tables: Mutex<HashMap<u64, Arc<IgSo3Table>>>,
}

impl TableCache {
    pub fn new() -> Self {
        Self::with_resolution(DEFAULT_GRID, DEFAULT_SERIES_LEN)
    }

    pub fn with_resolution(n_omega: usize, series_len: usize) -> Self {
        TableCache {
            n_omega,
            series_len,
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, eps2: f64) -> Result<Arc<IgSo3Table>, Igso3Error> {
        let key = eps2.to_bits();
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let table = Arc::new(IgSo3Table::build(eps2, self.n_omega, self.series_len)?);
        self.tables.lock().unwrap().insert(key, table.clone());
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Kolmogorov-Smirnov statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

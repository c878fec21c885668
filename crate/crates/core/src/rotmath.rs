//! SO(3) primitives: exponential and logarithm maps, geodesic flow and
//! geodesic distance.
//!
//! Rotations are stored as plain 3×3 matrices. The logarithm returns the
//! canonical axis-angle branch with angle in `[0, π]`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Mul;

/// Below this angle the log uses the first-order limit `½ vee(R − Rᵀ)`.
const SMALL_ANGLE: f64 = 1e-6;
/// Above `π − NEAR_PI` the axis is read from the symmetric part of `R`.
const NEAR_PI: f64 = 1e-4;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

/// Rotation vector `angle · axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation about `axis` (need not be normalized) by `angle` radians.
    pub fn about_axis(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_rotation(&AxisAngle(axis * (angle / n)))
    }

    /// Rotation whose columns are the given (orthonormal, right-handed) axes.
    pub fn from_basis(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        Rotation(Matrix3::from_columns(&[x, y, z]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Self {
        Rotation(Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]))
    }

    /// Largest deviation from orthonormality and unit determinant.
    pub fn validity_error(&self) -> f64 {
        let m = &self.0;
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = (m.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|x| x.is_finite()) && self.validity_error() <= tol
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        log_rotation(self).angle()
    }

    /// Projects onto SO(3) via Gram-Schmidt on the columns. Used to stop
    /// round-off from accumulating over long compositions.
    pub fn renormalized(&self) -> Self {
        let x = self.0.column(0).normalize();
        let y = self.0.column(1) - x * x.dot(&self.0.column(1));
        let y = y.normalize();
        let z = x.cross(&y);
        Rotation::from_basis(x, y, z)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Skew-symmetric matrix of `w`, so that `hat(w) * v == w × v`.
#[rustfmt::skip]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

/// Inverse of [`hat`]; does not check skew-symmetry.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula.
pub fn exp_rotation(v: &AxisAngle) -> Rotation {
    let w = v.0;
    let theta2 = w.norm_squared();
    let k = hat(&w);
    let (a, b) = if theta2 < 1e-12 {
        // sin θ / θ and (1 − cos θ) / θ² to second order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map onto the canonical branch `‖v‖ ∈ [0, π]`.
pub fn log_rotation(r: &Rotation) -> AxisAngle {
    let m = &r.0;
    let skew = vee(&(m - m.transpose()));
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_theta = 0.5 * skew.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        return AxisAngle(skew * 0.5);
    }
    if theta > std::f64::consts::PI - NEAR_PI {
        // R − Rᵀ vanishes at π; read the axis from S = (R + Rᵀ)/2 = cos θ I + (1 − cos θ) n nᵀ.
        let s = (m + m.transpose()) * 0.5;
        let nn = (s - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let i = (0..3)
            .max_by(|&a, &b| nn[(a, a)].total_cmp(&nn[(b, b)]))
            .unwrap();
        let mut axis = nn.column(i).into_owned() / nn[(i, i)].max(0.0).sqrt();
        axis.normalize_mut();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return AxisAngle(axis * theta);
    }
    AxisAngle(skew * (theta / (2.0 * sin_theta)))
}

/// `exp(γ · log R)`: the point at fraction `γ` along the geodesic from `I` to `R`.
pub fn geodesic_flow(gamma: f64, r: &Rotation) -> Rotation {
    exp_rotation(&AxisAngle(log_rotation(r).0 * gamma))
}

/// Angle of `R1ᵀ R2`, in `[0, π]`.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    let rel = Rotation(r1.0.transpose() * r2.0);
    log_rotation(&rel).angle()
}

/// Uniform direction on the unit sphere (normalized Gaussian).
pub fn sample_uniform_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Haar-uniform rotation, used as a test fixture and for initial states.
pub fn sample_haar<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    // Uniform unit quaternion.
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Rotation(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

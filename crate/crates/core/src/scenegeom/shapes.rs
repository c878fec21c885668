//! Analytic solids: inside tests, bounds, surface areas and uniform surface
//! sampling for the handful of primitives that make up mugs and racks.

use crate::posediff::Pose;
use crate::rotmath::Rotation;
use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn include(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }

    /// Bounds of this box after a rigid transform.
    pub fn transformed(&self, pose: &Pose) -> Aabb {
        let mut out = Aabb::empty();
        if self.is_empty() {
            return out;
        }
        for c in self.corners() {
            out.include(&pose.transform_point(&c));
        }
        out
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Box with half extents `half` along the axes of `pose`.
    Cuboid { pose: Pose, half: Vector3<f64> },
    /// Sphere swept along the segment `a`–`b`.
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    /// Ring torus around `axis` (unit) through `center`.
    Torus {
        center: Vector3<f64>,
        axis: Vector3<f64>,
        major: f64,
        minor: f64,
    },
    /// Sphere swept along the arc `center + bend (cos φ u + sin φ v)`,
    /// `φ ∈ [0, sweep]`; `u`, `v` orthonormal.
    ArcTube {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        bend: f64,
        sweep: f64,
        radius: f64,
    },
    /// Open-top cup: cylindrical wall plus floor, base at the origin of
    /// `pose` and opening along its z axis.
    Cup {
        pose: Pose,
        radius: f64,
        height: f64,
        wall: f64,
    },
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Unit vector orthogonal to `n`.
pub(crate) fn any_orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (seed - n * n.dot(&seed)).normalize()
}

/// Point on a hemisphere of radius `r` around `c` facing `out`.
fn hemisphere_point<R: Rng + ?Sized>(c: &Vector3<f64>, out: &Vector3<f64>, r: f64, rng: &mut R) -> Vector3<f64> {
    let mut d = random_unit(rng);
    if d.dot(out) < 0.0 {
        d = -d;
    }
    c + d * r
}

/// Tube angle θ with density ∝ (R + r cos θ), by rejection.
fn tube_angle<R: Rng + ?Sized>(major: f64, minor: f64, rng: &mut R) -> f64 {
    loop {
        let th = rng.random::<f64>() * 2.0 * PI;
        if rng.random::<f64>() * (major + minor) <= major + minor * th.cos() {
            return th;
        }
    }
}

fn disk_point<R: Rng + ?Sized>(r_in: f64, r_out: f64, rng: &mut R) -> (f64, f64) {
    let rr = (r_in * r_in + rng.random::<f64>() * (r_out * r_out - r_in * r_in)).sqrt();
    let phi = rng.random::<f64>() * 2.0 * PI;
    (rr * phi.cos(), rr * phi.sin())
}

impl Primitive {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Cuboid { pose, half } => {
                let q = pose.rotation.inverse().rotate(&(p - pose.translation));
                q.x.abs() <= half.x && q.y.abs() <= half.y && q.z.abs() <= half.z
            }
            Primitive::Capsule { a, b, radius } => segment_distance(p, a, b) <= *radius,
            Primitive::Torus {
                center,
                axis,
                major,
                minor,
            } => {
                let q = p - center;
                let h = q.dot(axis);
                let rho = (q - axis * h).norm();
                (rho - major).powi(2) + h * h <= minor * minor
            }
            Primitive::ArcTube { radius, .. } => self.arc_distance(p) <= *radius,
            Primitive::Cup {
                pose,
                radius,
                height,
                wall,
            } => {
                let q = pose.rotation.inverse().rotate(&(p - pose.translation));
                if q.z < 0.0 || q.z > *height {
                    return false;
                }
                let r = (q.x * q.x + q.y * q.y).sqrt();
                r <= *radius && (r >= radius - wall || q.z <= *wall)
            }
        }
    }

    fn arc_distance(&self, p: &Vector3<f64>) -> f64 {
        let Primitive::ArcTube {
            center,
            u,
            v,
            bend,
            sweep,
            ..
        } = self
        else {
            unreachable!()
        };
        let q = p - center;
        let (x, y) = (q.dot(u), q.dot(v));
        let phi = y.atan2(x);
        let phi = if phi < 0.0 { phi + 2.0 * PI } else { phi };
        let on_arc = |f: f64| center + (u * f.cos() + v * f.sin()) * *bend;
        if phi <= *sweep {
            (p - on_arc(phi)).norm()
        } else {
            (p - on_arc(0.0)).norm().min((p - on_arc(*sweep)).norm())
        }
    }

    pub fn aabb(&self) -> Aabb {
        match self {
            Primitive::Cuboid { pose, half } => Aabb { min: -half, max: *half }.transformed(pose),
            Primitive::Capsule { a, b, radius } => Aabb {
                min: a.inf(b).add_scalar(-radius),
                max: a.sup(b).add_scalar(*radius),
            },
            Primitive::Torus {
                center,
                axis,
                major,
                minor,
            } => {
                let ext = Vector3::from_fn(|k, _| major * (1.0 - axis[k] * axis[k]).max(0.0).sqrt() + minor);
                Aabb {
                    min: center - ext,
                    max: center + ext,
                }
            }
            Primitive::ArcTube {
                center,
                u,
                v,
                bend,
                radius,
                ..
            } => {
                let n = u.cross(v);
                let ext = Vector3::from_fn(|k, _| bend * (1.0 - n[k] * n[k]).max(0.0).sqrt() + radius);
                Aabb {
                    min: center - ext,
                    max: center + ext,
                }
            }
            Primitive::Cup {
                pose,
                radius,
                height,
                ..
            } => Aabb {
                min: Vector3::new(-radius, -radius, 0.0),
                max: Vector3::new(*radius, *radius, *height),
            }
            .transformed(pose),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self {
            Primitive::Cuboid { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Capsule { a, b, radius } => 2.0 * PI * radius * (b - a).norm() + 4.0 * PI * radius * radius,
            Primitive::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
            Primitive::ArcTube {
                bend, sweep, radius, ..
            } => 2.0 * PI * radius * bend * sweep + 4.0 * PI * radius * radius,
            Primitive::Cup {
                radius,
                height,
                wall,
                ..
            } => {
                let ri = radius - wall;
                2.0 * PI * radius * height
                    + 2.0 * PI * ri * (height - wall)
                    + PI * (radius * radius - ri * ri)
                    + PI * radius * radius
                    + PI * ri * ri
            }
        }
    }

    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match self {
            Primitive::Cuboid { pose, half } => {
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let axis = WeightedIndex::new(areas).unwrap().sample(rng);
                let mut q = Vector3::from_fn(|k, _| (2.0 * rng.random::<f64>() - 1.0) * half[k]);
                q[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
                pose.transform_point(&q)
            }
            Primitive::Capsule { a, b, radius } => {
                let len = (b - a).norm();
                let side = 2.0 * PI * radius * len;
                let total = side + 4.0 * PI * radius * radius;
                let dir = if len > 0.0 { (b - a) / len } else { Vector3::z() };
                if rng.random::<f64>() * total < side {
                    let e1 = any_orthogonal(&dir);
                    let e2 = dir.cross(&e1);
                    let th = rng.random::<f64>() * 2.0 * PI;
                    a + dir * (rng.random::<f64>() * len) + (e1 * th.cos() + e2 * th.sin()) * *radius
                } else if rng.random::<bool>() {
                    hemisphere_point(b, &dir, *radius, rng)
                } else {
                    hemisphere_point(a, &-dir, *radius, rng)
                }
            }
            Primitive::Torus {
                center,
                axis,
                major,
                minor,
            } => {
                let e1 = any_orthogonal(axis);
                let e2 = axis.cross(&e1);
                let th = tube_angle(*major, *minor, rng);
                let phi = rng.random::<f64>() * 2.0 * PI;
                let radial = e1 * phi.cos() + e2 * phi.sin();
                center + radial * (major + minor * th.cos()) + axis * (minor * th.sin())
            }
            Primitive::ArcTube {
                center,
                u,
                v,
                bend,
                sweep,
                radius,
            } => {
                let side = 2.0 * PI * radius * bend * sweep;
                let total = side + 4.0 * PI * radius * radius;
                let n = u.cross(v);
                if rng.random::<f64>() * total < side {
                    let phi = rng.random::<f64>() * sweep;
                    let th = tube_angle(*bend, *radius, rng);
                    let radial = u * phi.cos() + v * phi.sin();
                    center + radial * (bend + radius * th.cos()) + n * (radius * th.sin())
                } else if rng.random::<bool>() {
                    let start = center + u * *bend;
                    hemisphere_point(&start, &-v, *radius, rng)
                } else {
                    let end = center + (u * sweep.cos() + v * sweep.sin()) * *bend;
                    let tangent = -u * sweep.sin() + v * sweep.cos();
                    hemisphere_point(&end, &tangent, *radius, rng)
                }
            }
            Primitive::Cup {
                pose,
                radius,
                height,
                wall,
            } => {
                let ri = radius - wall;
                let areas = [
                    2.0 * PI * radius * height,
                    2.0 * PI * ri * (height - wall),
                    PI * (radius * radius - ri * ri),
                    PI * radius * radius,
                    PI * ri * ri,
                ];
                let th = rng.random::<f64>() * 2.0 * PI;
                let q = match WeightedIndex::new(areas).unwrap().sample(rng) {
                    0 => Vector3::new(radius * th.cos(), radius * th.sin(), rng.random::<f64>() * height),
                    1 => Vector3::new(ri * th.cos(), ri * th.sin(), wall + rng.random::<f64>() * (height - wall)),
                    2 => {
                        let (x, y) = disk_point(ri, *radius, rng);
                        Vector3::new(x, y, *height)
                    }
                    3 => {
                        let (x, y) = disk_point(0.0, *radius, rng);
                        Vector3::new(x, y, 0.0)
                    }
                    _ => {
                        let (x, y) = disk_point(0.0, ri, rng);
                        Vector3::new(x, y, *wall)
                    }
                };
                pose.transform_point(&q)
            }
        }
    }
}

/// Union of primitives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Solid {
    pub parts: Vec<Primitive>,
}

impl Solid {
    pub fn new(parts: Vec<Primitive>) -> Self {
        Solid { parts }
    }

    pub fn empty() -> Self {
        Solid::default()
    }

    pub fn cuboid(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Solid::new(vec![Primitive::Cuboid {
            pose: Pose::new(Rotation::identity(), center),
            half,
        }])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.parts.iter().any(|s| s.contains(p))
    }

    pub fn aabb(&self) -> Aabb {
        self.parts.iter().fold(Aabb::empty(), |acc, s| acc.union(&s.aabb()))
    }

    pub fn surface_area(&self) -> f64 {
        self.parts.iter().map(Primitive::surface_area).sum()
    }

    /// Area-weighted surface sample; also reports which part produced it.
    pub fn sample_surface_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vector3<f64>) {
        let idx = if self.parts.len() == 1 {
            0
        } else {
            WeightedIndex::new(self.parts.iter().map(Primitive::surface_area))
                .unwrap()
                .sample(rng)
        };
        (idx, self.parts[idx].sample_surface(rng))
    }
}

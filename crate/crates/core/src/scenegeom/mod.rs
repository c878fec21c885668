//! Procedural mugs and racks, surface point clouds, voxel occupancy and the
//! hanging success test.
//!
//! Rack geometry lives in the rack frame (post axis along +z through the
//! origin, base on z = 0). A rack's `placement` maps that frame into the
//! world; mug poses handed to the world-level checks are world poses.

pub mod shapes;
pub mod voxel;

pub use shapes::{Aabb, Primitive, Solid};
pub use voxel::{overlap_count, overlap_volume, voxelize, VoxelGrid, DEFAULT_RESOLUTION};

use crate::denoiser::ConditionId;
use crate::posediff::Pose;
use crate::rotmath::Rotation;
use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use voxel::{cell_center, index_range};

pub const DEFAULT_CLOUD_POINTS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("voxel resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("grids have different resolutions ({0} vs {1})")]
    ResolutionMismatch(f64, f64),
    #[error("invalid mug: {0}")]
    InvalidMug(String),
    #[error("invalid rack: {0}")]
    InvalidRack(String),
    #[error("rack has no hook '{0}'")]
    NoSuchHook(ConditionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MugSpec {
    pub body_radius: f64,
    pub body_height: f64,
    pub wall_thickness: f64,
    pub handle_major_radius: f64,
    pub handle_minor_radius: f64,
    pub handle_center_height: f64,
}

impl MugSpec {
    pub fn preset_a() -> Self {
        MugSpec {
            body_radius: 0.040,
            body_height: 0.095,
            wall_thickness: 0.004,
            handle_major_radius: 0.022,
            handle_minor_radius: 0.0055,
            handle_center_height: 0.050,
        }
    }

    pub fn preset_b() -> Self {
        MugSpec {
            body_radius: 0.036,
            body_height: 0.105,
            wall_thickness: 0.0035,
            handle_major_radius: 0.024,
            handle_minor_radius: 0.005,
            handle_center_height: 0.055,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let vals = [
            self.body_radius,
            self.body_height,
            self.wall_thickness,
            self.handle_major_radius,
            self.handle_minor_radius,
            self.handle_center_height,
        ];
        if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(GeomError::InvalidMug("all dimensions must be positive".into()));
        }
        if self.handle_minor_radius >= self.handle_major_radius {
            return Err(GeomError::InvalidMug("handle minor radius must be below major radius".into()));
        }
        if self.wall_thickness >= self.body_radius || self.wall_thickness >= self.body_height {
            return Err(GeomError::InvalidMug("wall thicker than body".into()));
        }
        if self.handle_center_height >= self.body_height {
            return Err(GeomError::InvalidMug("handle above rim".into()));
        }
        Ok(())
    }

    /// Radius of the open disk spanning the handle hole.
    pub fn hole_radius(&self) -> f64 {
        self.handle_major_radius - self.handle_minor_radius
    }

    /// Hole center in the mug frame.
    pub fn handle_center(&self) -> Vector3<f64> {
        Vector3::new(
            self.body_radius + self.handle_major_radius,
            0.0,
            self.handle_center_height,
        )
    }

    /// Body (cup) and handle (torus in the mug's xz-plane).
    pub fn solid(&self) -> Solid {
        Solid::new(vec![
            Primitive::Cup {
                pose: Pose::identity(),
                radius: self.body_radius,
                height: self.body_height,
                wall: self.wall_thickness,
            },
            Primitive::Torus {
                center: self.handle_center(),
                axis: Vector3::y(),
                major: self.handle_major_radius,
                minor: self.handle_minor_radius,
            },
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookProfile {
    Cylindrical,
    /// Square cross-section of half-width `radius`.
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookShape {
    Straight,
    /// Single upward arc of the given bend radius.
    Curved { bend_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookSpec {
    pub id: ConditionId,
    pub anchor: Vector3<f64>,
    /// Horizontal unit direction of the hook leaving the post.
    pub direction: Vector3<f64>,
    pub length: f64,
    pub radius: f64,
    /// Elevation of the initial hook axis above horizontal.
    pub tilt: f64,
    pub profile: HookProfile,
    pub shape: HookShape,
}

impl HookSpec {
    pub fn straight(id: ConditionId, anchor: Vector3<f64>, direction: Vector3<f64>, length: f64) -> Self {
        HookSpec {
            id,
            anchor,
            direction: direction.normalize(),
            length,
            radius: 0.005,
            tilt: 0.0,
            profile: HookProfile::Cylindrical,
            shape: HookShape::Straight,
        }
    }

    /// Unit axis at the anchor.
    pub fn initial_axis(&self) -> Vector3<f64> {
        self.direction * self.tilt.cos() + Vector3::z() * self.tilt.sin()
    }

    fn bend_normal(&self) -> Vector3<f64> {
        let d0 = self.initial_axis();
        (Vector3::z() - d0 * d0.z).normalize()
    }

    /// Centerline point at arc length `s` from the anchor.
    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        let d0 = self.initial_axis();
        match self.shape {
            HookShape::Straight => self.anchor + d0 * s,
            HookShape::Curved { bend_radius: rb } => {
                let a = s / rb;
                self.anchor + d0 * (rb * a.sin()) + self.bend_normal() * (rb * (1.0 - a.cos()))
            }
        }
    }

    pub fn tangent_at(&self, s: f64) -> Vector3<f64> {
        let d0 = self.initial_axis();
        match self.shape {
            HookShape::Straight => d0,
            HookShape::Curved { bend_radius: rb } => {
                let a = s / rb;
                d0 * a.cos() + self.bend_normal() * a.sin()
            }
        }
    }

    pub fn tip(&self) -> Vector3<f64> {
        self.point_at(self.length)
    }

    /// Centerline polyline with `segments` pieces (one for straight hooks).
    pub fn centerline(&self, segments: usize) -> Vec<Vector3<f64>> {
        let n = match self.shape {
            HookShape::Straight => 1,
            HookShape::Curved { .. } => segments.max(1),
        };
        (0..=n).map(|i| self.point_at(self.length * i as f64 / n as f64)).collect()
    }

    /// Radius of the smallest circle around the centerline enclosing the
    /// cross-section.
    pub fn effective_radius(&self) -> f64 {
        match self.profile {
            HookProfile::Cylindrical => self.radius,
            HookProfile::Rectangular => self.radius * std::f64::consts::SQRT_2,
        }
    }

    /// Corner offsets of a straight square bar's cross-section.
    pub fn section_corners(&self) -> Option<[Vector3<f64>; 4]> {
        if self.profile != HookProfile::Rectangular || self.shape != HookShape::Straight {
            return None;
        }
        let d0 = self.initial_axis();
        let side = Vector3::z().cross(&d0).normalize() * self.radius;
        let up = d0.cross(&side);
        Some([side + up, side - up, -side + up, -side - up])
    }

    /// Solid model. Curved hooks are always round in section.
    pub fn primitive(&self) -> Primitive {
        let d0 = self.initial_axis();
        match (self.shape, self.profile) {
            (HookShape::Curved { bend_radius }, _) => {
                let nrm = self.bend_normal();
                Primitive::ArcTube {
                    center: self.anchor + nrm * bend_radius,
                    u: -nrm,
                    v: d0,
                    bend: bend_radius,
                    sweep: self.length / bend_radius,
                    radius: self.radius,
                }
            }
            (HookShape::Straight, HookProfile::Cylindrical) => Primitive::Capsule {
                a: self.anchor,
                b: self.tip(),
                radius: self.radius,
            },
            (HookShape::Straight, HookProfile::Rectangular) => {
                let side = Vector3::z().cross(&d0).normalize();
                let up = d0.cross(&side);
                Primitive::Cuboid {
                    pose: Pose::new(
                        Rotation::from_basis(d0, side, up),
                        self.anchor + d0 * (self.length / 2.0),
                    ),
                    half: Vector3::new(self.length / 2.0, self.radius, self.radius),
                }
            }
        }
    }

    /// Slide positions along the hook where a mug handle fits between the
    /// post and the tip.
    pub fn slide_range(&self, mug: &MugSpec, post_radius: f64) -> (f64, f64) {
        let b = mug.handle_minor_radius;
        (post_radius + b + 0.004, self.length - b - 0.008)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RackSpec {
    /// Full box extents of the base slab; its bottom face lies on z = 0.
    pub base_extents: Vector3<f64>,
    pub post_radius: f64,
    pub post_height: f64,
    pub hooks: Vec<HookSpec>,
    /// Rack frame to world.
    pub placement: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RackKind {
    LongShort,
    HighLow,
    HorizontalTilted,
    RectangularCylindrical,
    CurvedStraight,
}

impl RackKind {
    pub const ALL: [RackKind; 5] = [
        RackKind::LongShort,
        RackKind::HighLow,
        RackKind::HorizontalTilted,
        RackKind::RectangularCylindrical,
        RackKind::CurvedStraight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RackKind::LongShort => "long-short",
            RackKind::HighLow => "high-low",
            RackKind::HorizontalTilted => "horizontal-tilted",
            RackKind::RectangularCylindrical => "rectangular-cylindrical",
            RackKind::CurvedStraight => "curved-straight",
        }
    }
}

impl RackSpec {
    /// One of the five two-hook racks; each pair differs in one attribute.
    pub fn archetype(kind: RackKind) -> Self {
        use ConditionId as C;
        let (px, nx) = (Vector3::x(), -Vector3::x());
        let at = |z: f64| Vector3::new(0.0, 0.0, z);
        let hooks = match kind {
            RackKind::LongShort => vec![
                HookSpec::straight(C::Longer, at(0.30), px, 0.14),
                HookSpec::straight(C::Shorter, at(0.30), nx, 0.10),
            ],
            RackKind::HighLow => vec![
                HookSpec::straight(C::Higher, at(0.34), px, 0.12),
                HookSpec::straight(C::Lower, at(0.24), nx, 0.12),
            ],
            RackKind::HorizontalTilted => vec![
                HookSpec::straight(C::Horizontal, at(0.30), px, 0.12),
                HookSpec {
                    tilt: 0.35,
                    ..HookSpec::straight(C::Tilted, at(0.28), nx, 0.12)
                },
            ],
            RackKind::RectangularCylindrical => vec![
                HookSpec {
                    profile: HookProfile::Rectangular,
                    radius: 0.0045,
                    ..HookSpec::straight(C::Rectangular, at(0.30), px, 0.12)
                },
                HookSpec::straight(C::Cylindrical, at(0.30), nx, 0.12),
            ],
            RackKind::CurvedStraight => vec![
                HookSpec {
                    shape: HookShape::Curved { bend_radius: 0.15 },
                    ..HookSpec::straight(C::Curved, at(0.28), px, 0.13)
                },
                HookSpec::straight(C::Straight, at(0.30), nx, 0.12),
            ],
        };
        RackSpec {
            base_extents: Vector3::new(0.2, 0.2, 0.02),
            post_radius: 0.012,
            post_height: 0.42,
            hooks,
            placement: Pose::identity(),
        }
    }

    /// Copy keeping only the listed hooks.
    pub fn with_hooks(&self, ids: &[ConditionId]) -> Self {
        RackSpec {
            hooks: self.hooks.iter().filter(|h| ids.contains(&h.id)).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn hook(&self, id: ConditionId) -> Result<&HookSpec, GeomError> {
        self.hooks.iter().find(|h| h.id == id).ok_or(GeomError::NoSuchHook(id))
    }

    /// Rack solid in the rack frame.
    pub fn solid(&self) -> Solid {
        let mut parts = vec![
            Primitive::Cuboid {
                pose: Pose::from_translation(Vector3::new(0.0, 0.0, self.base_extents.z / 2.0)),
                half: self.base_extents / 2.0,
            },
            Primitive::Capsule {
                a: Vector3::zeros(),
                b: Vector3::new(0.0, 0.0, self.post_height),
                radius: self.post_radius,
            },
        ];
        parts.extend(self.hooks.iter().map(HookSpec::primitive));
        Solid::new(parts)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.hooks.is_empty() {
            return Err(GeomError::InvalidRack("no hooks".into()));
        }
        if !(self.post_radius > 0.0 && self.post_height > 0.0) {
            return Err(GeomError::InvalidRack("post dimensions must be positive".into()));
        }
        let outside = |h: &HookSpec| -> Vec<Vector3<f64>> {
            (0..=200)
                .map(|i| h.point_at(h.length * i as f64 / 200.0))
                .filter(|p| p.xy().norm() > self.post_radius + h.radius)
                .collect()
        };
        for (i, a) in self.hooks.iter().enumerate() {
            for b in &self.hooks[i + 1..] {
                let reach = a.effective_radius() + b.effective_radius();
                for p in outside(a) {
                    for q in outside(b) {
                        if (p - q).norm() <= reach {
                            return Err(GeomError::InvalidRack(format!("hooks {} and {} intersect", a.id, b.id)));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One mug next to one rack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub mug: MugSpec,
    pub rack: RackSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), GeomError> {
        self.mug.validate()?;
        self.rack.validate()?;
        for h in &self.rack.hooks {
            if h.length <= 2.0 * self.mug.handle_minor_radius {
                return Err(GeomError::InvalidRack(format!("hook {} too short for the mug", h.id)));
            }
            if h.effective_radius() >= self.mug.hole_radius() {
                return Err(GeomError::InvalidRack(format!("hook {} too thick for the handle", h.id)));
            }
        }
        Ok(())
    }
}

/// Anything with an analytic solid model.
pub trait Shape {
    fn solid(&self) -> Solid;
}

impl Shape for MugSpec {
    fn solid(&self) -> Solid {
        MugSpec::solid(self)
    }
}

impl Shape for RackSpec {
    fn solid(&self) -> Solid {
        RackSpec::solid(self)
    }
}

impl Shape for Solid {
    fn solid(&self) -> Solid {
        self.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + delta).collect(),
        }
    }

    pub fn to_xyz(&self) -> String {
        self.points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect()
    }
}

/// Area-weighted uniform samples over the shape's surfaces, in its own frame.
pub fn sample_surface<S: Shape + ?Sized, R: Rng + ?Sized>(shape: &S, n: usize, rng: &mut R) -> PointCloud {
    let solid = shape.solid();
    PointCloud {
        points: (0..n).map(|_| solid.sample_surface_labeled(rng).1).collect(),
    }
}

/// True when the hook centerline crosses the handle's hole disk with more
/// than the hook's effective radius to spare. `pose` places the mug in the
/// rack frame.
pub fn hook_through_handle(mug: &MugSpec, pose: &Pose, hook: &HookSpec) -> bool {
    let c = pose.transform_point(&mug.handle_center());
    let n = pose.rotation.rotate(&Vector3::y());
    let rho = mug.hole_radius();
    let line = hook.centerline(64);
    line.windows(2).any(|w| {
        let (d0, d1) = ((w[0] - c).dot(&n), (w[1] - c).dot(&n));
        if !(d0 * d1 < 0.0) {
            return false;
        }
        let x = w[0] + (w[1] - w[0]) * (d0 / (d0 - d1));
        match hook.section_corners() {
            None => rho - (x - c).norm() > hook.radius,
            Some(corners) => {
                // each edge line of the square bar must pass inside the disk
                let axis = hook.initial_axis();
                let cos = axis.dot(&n);
                cos.abs() > 1e-9
                    && corners.iter().all(|off| {
                        let q = x + off;
                        let hit = q - axis * ((q - c).dot(&n) / cos);
                        (hit - c).norm() < rho
                    })
            }
        }
    })
}

/// Rack solid with its occupancy grid cached; answers overlap queries for
/// many mug poses.
#[derive(Debug, Clone)]
pub struct RackModel {
    pub spec: RackSpec,
    solid: Solid,
    grid: VoxelGrid,
}

impl RackModel {
    pub fn build(spec: &RackSpec, resolution: f64) -> Result<Self, GeomError> {
        let solid = spec.solid();
        let grid = voxelize(&solid, &Pose::identity(), resolution)?;
        Ok(RackModel {
            spec: spec.clone(),
            solid,
            grid,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.grid.resolution
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn solid(&self) -> &Solid {
        &self.solid
    }

    /// Voxel volume of the rack (m³).
    pub fn volume(&self) -> f64 {
        self.grid.volume()
    }

    pub fn to_rack_frame(&self, world: &Pose) -> Pose {
        self.spec.placement.inverse().compose(world)
    }

    pub fn to_world(&self, rack_pose: &Pose) -> Pose {
        self.spec.placement.compose(rack_pose)
    }

    /// Rack cells whose centers also lie inside `mug` placed at `pose`
    /// (rack frame). Equals the cell count of voxelizing the mug on the
    /// rack lattice and intersecting.
    pub fn overlap_cells(&self, mug: &Solid, pose: &Pose) -> usize {
        let inv = pose.inverse();
        let res = self.grid.resolution;
        let (lo, hi) = index_range(&mug.aabb().transformed(pose), res);
        let mut n = 0;
        self.grid.for_each_occupied_in(lo, hi, |idx| {
            if mug.contains(&inv.transform_point(&cell_center(idx, res))) {
                n += 1;
            }
        });
        n
    }

    pub fn overlap_volume(&self, mug: &Solid, pose: &Pose) -> f64 {
        self.overlap_cells(mug, pose) as f64 * self.grid.voxel_volume()
    }

    /// Centers of occupied rack cells whose index range meets `bounds`.
    pub fn occupied_centers_in(&self, bounds: &Aabb) -> Vec<Vector3<f64>> {
        let res = self.grid.resolution;
        let (lo, hi) = index_range(bounds, res);
        let mut out = Vec::new();
        self.grid.for_each_occupied_in(lo, hi, |idx| out.push(cell_center(idx, res)));
        out
    }

    /// World-frame success test: hook threads the handle and no cell is shared.
    pub fn is_success(&self, mug: &MugSpec, world_pose: &Pose, hook: &HookSpec) -> bool {
        let pose = self.to_rack_frame(world_pose);
        hook_through_handle(mug, &pose, hook) && self.overlap_cells(&mug.solid(), &pose) == 0
    }
}

/// Full check from specs; rebuilds the rack grid on every call.
pub fn is_success(mug: &MugSpec, pose: &Pose, rack: &RackSpec, hook: &HookSpec, resolution: f64) -> bool {
    match RackModel::build(rack, resolution) {
        Ok(model) => model.is_success(mug, pose, hook),
        Err(_) => false,
    }
}

/// Rack-frame mug pose hanging on `hook` at arc length `slide`, rolled by
/// `roll` about the hook tangent, with the hook resting `gap` below the top
/// of the handle hole.
pub fn hanging_pose(mug: &MugSpec, hook: &HookSpec, slide: f64, roll: f64, gap: f64) -> Pose {
    let p = hook.point_at(slide);
    let d = hook.tangent_at(slide);
    let up = (Vector3::z() - d * d.z).normalize();
    let base = Rotation::from_basis(d.cross(&up), d, up);
    let rot = &Rotation::about_axis(&d, roll) * &base;
    let rho = mug.hole_radius();
    let drop = match hook.profile {
        HookProfile::Cylindrical => rho - hook.radius - gap,
        HookProfile::Rectangular => {
            let w = hook.radius;
            ((rho - gap).powi(2) - w * w).sqrt() - w
        }
    };
    let hole = p - up * drop;
    Pose::new(rot, hole - rot.rotate(&mug.handle_center()))
}

//! De-overlap stage: translation jitter around a predicted pose, success
//! filtering, and ranking by the gravity-descent coverage coefficient.

use crate::harness::dataset::Normalization;
use crate::posediff::Pose;
use crate::scenegeom::{Aabb, HookSpec, MugSpec, RackModel, RackSpec, Solid, GeomError};
use crate::schedule::AdjustSchedule;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_Z_MAX: f64 = 0.02;
pub const DEFAULT_Z_STEPS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdcResult {
    /// Best intersection-to-rack volume ratio over the descent.
    pub c_gdc: f64,
    /// Descent depth (m) at which the best ratio occurs.
    pub z_opt: f64,
    /// Smallest scanned depth with any overlap, if one exists.
    pub z_contact: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    /// World pose; the prediction itself when nothing better was found.
    pub pose: Pose,
    pub iterations: usize,
    pub c_gdc: f64,
    pub z_opt: f64,
    pub succeeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub max_iter: usize,
    pub z_max: f64,
    pub z_steps: usize,
    pub adjust: AdjustSchedule,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iter: DEFAULT_MAX_ITER,
            z_max: DEFAULT_Z_MAX,
            z_steps: DEFAULT_Z_STEPS,
            adjust: AdjustSchedule::new(),
        }
    }
}

/// Lowers the mug along world −z over `n_steps` depths in `[0, z_max]` and
/// records the overlap ratio against the whole rack volume.
pub fn gdc_scan(rack: &RackModel, mug: &Solid, world_pose: &Pose, z_max: f64, n_steps: usize) -> GdcResult {
    assert!(z_max > 0.0 && n_steps >= 2, "descent needs z_max > 0 and at least two steps");
    let pose = rack.to_rack_frame(world_pose);
    let down = rack.spec.placement.rotation.inverse().rotate(&-Vector3::z());
    let start = mug.aabb().transformed(&pose);
    let swept = start.union(&Aabb {
        min: start.min + down * z_max,
        max: start.max + down * z_max,
    });
    let cells = rack.occupied_centers_in(&swept);
    let total = rack.grid().occupied_count().max(1) as f64;
    let inv_rot = pose.rotation.inverse();
    let mut best = GdcResult {
        c_gdc: 0.0,
        z_opt: 0.0,
        z_contact: None,
    };
    for i in 0..n_steps {
        let z = z_max * i as f64 / (n_steps - 1) as f64;
        let origin = pose.translation + down * z;
        let n = cells
            .iter()
            .filter(|c| mug.contains(&inv_rot.rotate(&(*c - origin))))
            .count();
        if n > 0 && best.z_contact.is_none() {
            best.z_contact = Some(z);
        }
        let ratio = n as f64 / total;
        if ratio > best.c_gdc {
            best.c_gdc = ratio;
            best.z_opt = z;
        }
    }
    best
}

/// Coverage coefficient and its depth for a world mug pose; builds the rack
/// grid on each call.
pub fn gdc_coefficient(
    mug: &MugSpec,
    pose: &Pose,
    rack: &RackSpec,
    z_max: f64,
    n_steps: usize,
    resolution: f64,
) -> Result<(f64, f64), GeomError> {
    let model = RackModel::build(rack, resolution)?;
    let r = gdc_scan(&model, &mug.solid(), pose, z_max, n_steps);
    Ok((r.c_gdc, r.z_opt))
}

/// One forward step of the adjust schedule on the translation only.
pub fn jitter_translation<R: Rng + ?Sized>(pose: &Pose, adj: &AdjustSchedule, rng: &mut R) -> Pose {
    let ab = adj.alpha_bar();
    let eps = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    Pose::new(pose.rotation, pose.translation * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Jitters `predicted` (world frame) up to `cfg.max_iter` times, keeps the
/// candidates that pass the success test, and returns the one with the
/// largest coverage coefficient. Jitter is applied in network units given by
/// `norm`. `iterations` is the 1-based index of the first successful
/// candidate, or `max_iter` when none succeeds.
pub fn refine_pose<R: Rng + ?Sized>(
    mug: &MugSpec,
    rack: &RackModel,
    hook: &HookSpec,
    predicted: &Pose,
    norm: &Normalization,
    cfg: &RefineConfig,
    rng: &mut R,
) -> RefineResult {
    let solid = mug.solid();
    if rack.is_success(mug, predicted, hook) {
        let g = gdc_scan(rack, &solid, predicted, cfg.z_max, cfg.z_steps);
        return RefineResult {
            pose: *predicted,
            iterations: 0,
            c_gdc: g.c_gdc,
            z_opt: g.z_opt,
            succeeded: true,
        };
    }
    let base = norm.pose_to_net(predicted);
    let mut best: Option<(RefineResult, f64)> = None;
    let mut first = None;
    for it in 1..=cfg.max_iter {
        let cand = norm.pose_from_net(&jitter_translation(&base, &cfg.adjust, rng));
        if !rack.is_success(mug, &cand, hook) {
            continue;
        }
        let g = gdc_scan(rack, &solid, &cand, cfg.z_max, cfg.z_steps);
        if g.c_gdc <= 0.0 {
            continue;
        }
        first.get_or_insert(it);
        let dev = (cand.translation - predicted.translation).norm();
        let better = match &best {
            None => true,
            Some((b, bdev)) => g.c_gdc > b.c_gdc || (g.c_gdc == b.c_gdc && dev < *bdev),
        };
        if better {
            best = Some((
                RefineResult {
                    pose: cand,
                    iterations: 0,
                    c_gdc: g.c_gdc,
                    z_opt: g.z_opt,
                    succeeded: true,
                },
                dev,
            ));
        }
    }
    match (best, first) {
        (Some((mut r, _)), Some(it)) => {
            r.iterations = it;
            r
        }
        _ => RefineResult {
            pose: *predicted,
            iterations: cfg.max_iter,
            c_gdc: 0.0,
            z_opt: 0.0,
            succeeded: false,
        },
    }
}

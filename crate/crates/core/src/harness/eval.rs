//! Trial drivers: sample target poses, check and refine them, and aggregate
//! success rates, refinement counts and nearest-ground-truth errors.

use super::dataset::{Demo, Normalization};
use crate::denoiser::{ConditionId, Denoiser, DenoiserError};
use crate::igso3::TableCache;
use crate::posediff::{sample_batch, DiffusionError, NoisePair, NoisePredictor, OracleDenoiser, PosteriorVariant, Pose};
use crate::refine::{refine_pose, RefineConfig};
use crate::rotmath::geodesic_distance;
use crate::scenegeom::{GeomError, RackModel, SceneSpec};
use crate::schedule::{AdjustSchedule, NoiseSchedule, ScheduleError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no demos for scene '{0}'")]
    NoDemos(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// The demos' own condition; success on the demos' hooks.
    Single,
    /// Unconditioned sampling; success on any hook of the scene.
    Multi,
    /// Sampling under a condition word; success only on that hook.
    Specified(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed: u64,
    pub refine: RefineConfig,
    pub variant: PosteriorVariant,
    /// Voxel size (m) of the success and overlap checks.
    pub resolution: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 50,
            seed: 0,
            refine: RefineConfig::default(),
            variant: PosteriorVariant::default(),
            resolution: crate::scenegeom::DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: usize,
    pub sr_nt: f64,
    pub sr_total: f64,
    /// Mean refinement iterations over successful trials (0 for direct hits).
    pub t_avg: f64,
    /// Mean geodesic distance (rad) to the nearest ground-truth rotation.
    pub eps_r: f64,
    /// Mean distance (network units) to the nearest ground-truth translation.
    pub eps_t: f64,
    /// Successful landings per hook, including hooks that were not asked for.
    pub mode_counts: BTreeMap<ConditionId, usize>,
}

/// A generator of target poses under a condition.
pub trait PoseModel {
    fn schedule(&self) -> Result<NoiseSchedule, EvalError>;
    fn normalization(&self) -> Normalization;
    fn predictor<'a>(&'a self, demo: &Demo, condition: ConditionId) -> Result<Box<dyn NoisePredictor + 'a>, EvalError>;
}

impl PoseModel for Denoiser {
    fn schedule(&self) -> Result<NoiseSchedule, EvalError> {
        Ok(self.schedule.build()?)
    }

    fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn predictor<'a>(&'a self, demo: &Demo, condition: ConditionId) -> Result<Box<dyn NoisePredictor + 'a>, EvalError> {
        Ok(Box::new(self.bind(&demo.mug_cloud, &demo.rack_cloud, condition)?))
    }
}

/// Exact-noise predictor for a set of targets: each pose is steered to the
/// target whose forward noise would be most probable, so ties between
/// equally likely targets are broken by the trajectory's own randomness.
pub struct MixtureOracle {
    pub targets: Vec<(ConditionId, Pose)>,
    pub schedule: NoiseSchedule,
    pub normalization: Normalization,
}

impl MixtureOracle {
    /// Targets are the demos' world poses.
    pub fn from_demos(demos: &[Demo], schedule: NoiseSchedule) -> Self {
        let normalization = demos.first().map(|d| d.normalization).unwrap_or_default();
        MixtureOracle {
            targets: demos
                .iter()
                .map(|d| (d.hook, normalization.pose_to_net(&d.target_pose)))
                .collect(),
            schedule,
            normalization,
        }
    }
}

struct BoundOracle<'a> {
    targets: Vec<Pose>,
    schedule: &'a NoiseSchedule,
}

impl NoisePredictor for BoundOracle<'_> {
    fn predict_noise(&self, noisy: &[Pose], t: usize) -> Vec<NoisePair> {
        noisy
            .iter()
            .map(|p| {
                self.targets
                    .iter()
                    .map(|g| OracleDenoiser::new(*g, self.schedule).noise_for(p, t))
                    .min_by(|a, b| {
                        let na = a.eps_r.norm_squared() + a.eps_t.norm_squared();
                        let nb = b.eps_r.norm_squared() + b.eps_t.norm_squared();
                        na.total_cmp(&nb)
                    })
                    .unwrap_or_else(NoisePair::zero)
            })
            .collect()
    }
}

impl PoseModel for MixtureOracle {
    fn schedule(&self) -> Result<NoiseSchedule, EvalError> {
        Ok(self.schedule.clone())
    }

    fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn predictor<'a>(&'a self, _demo: &Demo, condition: ConditionId) -> Result<Box<dyn NoisePredictor + 'a>, EvalError> {
        let targets = self
            .targets
            .iter()
            .filter(|(h, _)| !condition.is_hook() || *h == condition)
            .map(|(_, p)| *p)
            .collect();
        Ok(Box::new(BoundOracle {
            targets,
            schedule: &self.schedule,
        }))
    }
}

/// SplitMix64 finalizer; trial `i` of a run seeded with `seed` draws from
/// `ChaCha8Rng::seed_from_u64(trial_seed(seed, i))`.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sampled world poses plus the generator state each trial continues with.
pub struct Samples {
    pub poses: Vec<Pose>,
    pub rngs: Vec<ChaCha8Rng>,
}

pub fn sample_poses<M: PoseModel + ?Sized>(
    model: &M,
    demo: &Demo,
    condition: ConditionId,
    trials: usize,
    seed: u64,
    variant: PosteriorVariant,
) -> Result<Samples, EvalError> {
    let sched = model.schedule()?;
    let tables = TableCache::new();
    let predictor = model.predictor(demo, condition)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..trials as u64)
        .map(|i| ChaCha8Rng::seed_from_u64(trial_seed(seed, i)))
        .collect();
    let net = sample_batch(predictor.as_ref(), &sched, &tables, variant, &mut rngs)?;
    let norm = model.normalization();
    Ok(Samples {
        poses: net.iter().map(|p| norm.pose_from_net(p)).collect(),
        rngs,
    })
}

/// Hook of the demo nearest to `pose` in translation.
fn nearest_hook(demos: &[Demo], pose: &Pose) -> ConditionId {
    demos
        .iter()
        .min_by(|a, b| {
            let da = (a.target_pose.translation - pose.translation).norm();
            let db = (b.target_pose.translation - pose.translation).norm();
            da.total_cmp(&db)
        })
        .map(|d| d.hook)
        .unwrap_or(ConditionId::Unconditioned)
}

struct Tally {
    nt: usize,
    total: usize,
    iters: usize,
    eps_r: f64,
    eps_t: f64,
    counts: BTreeMap<ConditionId, usize>,
}

fn score(
    scene: &SceneSpec,
    rack: &RackModel,
    demos: &[Demo],
    targets: &[ConditionId],
    samples: &mut Samples,
    norm: &Normalization,
    refine: &RefineConfig,
) -> Tally {
    let mut t = Tally {
        nt: 0,
        total: 0,
        iters: 0,
        eps_r: 0.0,
        eps_t: 0.0,
        counts: BTreeMap::new(),
    };
    for (pose, rng) in samples.poses.iter().zip(samples.rngs.iter_mut()) {
        let landed = nearest_hook(demos, pose);
        let gt: Vec<&Demo> = demos.iter().filter(|d| d.hook == landed).collect();
        t.eps_r += gt
            .iter()
            .map(|d| geodesic_distance(&d.target_pose.rotation, &pose.rotation))
            .fold(f64::INFINITY, f64::min);
        t.eps_t += gt
            .iter()
            .map(|d| (d.target_pose.translation - pose.translation).norm() / norm.scale)
            .fold(f64::INFINITY, f64::min);
        let Ok(hook) = scene.rack.hook(landed) else { continue };
        let r = refine_pose(&scene.mug, rack, hook, pose, norm, refine, rng);
        if !r.succeeded {
            continue;
        }
        *t.counts.entry(landed).or_default() += 1;
        if targets.contains(&landed) {
            t.total += 1;
            t.iters += r.iterations;
            if r.iterations == 0 {
                t.nt += 1;
            }
        }
    }
    t
}

fn report(trials: usize, t: Tally) -> TrialReport {
    let n = trials.max(1) as f64;
    TrialReport {
        trials,
        sr_nt: t.nt as f64 / n,
        sr_total: t.total as f64 / n,
        t_avg: if t.total > 0 { t.iters as f64 / t.total as f64 } else { 0.0 },
        eps_r: t.eps_r / n,
        eps_t: t.eps_t / n,
        mode_counts: t.counts,
    }
}

fn failed_report(trials: usize) -> TrialReport {
    TrialReport {
        trials,
        sr_nt: 0.0,
        sr_total: 0.0,
        t_avg: 0.0,
        eps_r: f64::NAN,
        eps_t: f64::NAN,
        mode_counts: BTreeMap::new(),
    }
}

/// Condition used for sampling and hooks that count as success, or `None`
/// when the mode names a condition that does not exist or has no hook here.
fn resolve(mode: &EvalMode, scene: &SceneSpec, demos: &[Demo]) -> Option<(ConditionId, Vec<ConditionId>)> {
    let all: Vec<ConditionId> = scene.rack.hooks.iter().map(|h| h.id).collect();
    match mode {
        EvalMode::Single => {
            let mut hooks: Vec<ConditionId> = demos.iter().map(|d| d.hook).collect();
            hooks.dedup();
            Some((demos[0].condition, hooks))
        }
        EvalMode::Multi => Some((demos[0].condition, all)),
        EvalMode::Specified(word) => {
            let id: ConditionId = word.parse().ok()?;
            if id.is_hook() {
                all.contains(&id).then(|| (id, vec![id]))
            } else {
                Some((id, all))
            }
        }
    }
}

/// Runs `cfg.trials` sample-check-refine trials on `scene`. `demos` are the
/// scene's ground-truth demos (all hooks). An unknown condition in
/// `Specified` mode yields a report with every trial failed.
pub fn evaluate<M: PoseModel + ?Sized>(
    model: &M,
    scene: &SceneSpec,
    demos: &[Demo],
    mode: &EvalMode,
    cfg: &EvalConfig,
) -> Result<TrialReport, EvalError> {
    let demos: Vec<Demo> = demos.iter().filter(|d| d.scene == scene.name).cloned().collect();
    if demos.is_empty() {
        return Err(EvalError::NoDemos(scene.name.clone()));
    }
    let Some((cond, targets)) = resolve(mode, scene, &demos) else {
        return Ok(failed_report(cfg.trials));
    };
    let rack = RackModel::build(&scene.rack, cfg.resolution)?;
    let mut samples = sample_poses(model, &demos[0], cond, cfg.trials, cfg.seed, cfg.variant)?;
    let norm = model.normalization();
    Ok(report(cfg.trials, score(scene, &rack, &demos, &targets, &mut samples, &norm, &cfg.refine)))
}

/// Success share of each hook among all successful landings.
pub fn mode_coverage(report: &TrialReport) -> BTreeMap<ConditionId, f64> {
    let total: usize = report.mode_counts.values().sum();
    report
        .mode_counts
        .iter()
        .map(|(k, &v)| (*k, if total > 0 { v as f64 / total as f64 } else { 0.0 }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub t_jitter: usize,
    pub success_rate: f64,
    pub t_avg: f64,
}

/// Samples once, then refines the same predictions under each jitter step.
pub fn ablate_timestep<M: PoseModel + ?Sized>(
    model: &M,
    scene: &SceneSpec,
    demos: &[Demo],
    mode: &EvalMode,
    t_values: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<AblationRow>, EvalError> {
    let demos: Vec<Demo> = demos.iter().filter(|d| d.scene == scene.name).cloned().collect();
    if demos.is_empty() {
        return Err(EvalError::NoDemos(scene.name.clone()));
    }
    let Some((cond, targets)) = resolve(mode, scene, &demos) else {
        return Ok(t_values
            .iter()
            .map(|&t| AblationRow {
                t_jitter: t,
                success_rate: 0.0,
                t_avg: 0.0,
            })
            .collect());
    };
    let rack = RackModel::build(&scene.rack, cfg.resolution)?;
    let base = sample_poses(model, &demos[0], cond, cfg.trials, cfg.seed, cfg.variant)?;
    let norm = model.normalization();
    let mut rows = Vec::new();
    for &t in t_values {
        let refine = RefineConfig {
            adjust: AdjustSchedule::with_t_jitter(t)?,
            ..cfg.refine
        };
        let mut samples = Samples {
            poses: base.poses.clone(),
            rngs: base.rngs.clone(),
        };
        let r = report(cfg.trials, score(scene, &rack, &demos, &targets, &mut samples, &norm, &refine));
        rows.push(AblationRow {
            t_jitter: t,
            success_rate: r.sr_total,
            t_avg: r.t_avg,
        });
    }
    Ok(rows)
}

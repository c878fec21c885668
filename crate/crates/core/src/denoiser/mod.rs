//! The conditional noise-prediction network: pose, point-cloud, condition
//! and timestep encoders fused through a gated perceptron head, trained with
//! hand-written backpropagation.

pub mod condition;
pub mod network;
pub mod train;

pub use condition::{
    default_registry, embed_condition, embed_condition_str, ConditionEmbedding, ConditionError, ConditionId,
    ConditionRegistry,
};
pub use network::{timestep_features, CloudKind, DenoiserParams};
pub use train::{train, LossPoint, Optimizer, TrainConfig, TrainOutcome};

use crate::harness::dataset::Normalization;
use crate::igso3::Igso3Error;
use crate::posediff::{DiffusionError, NoisePair, NoisePredictor, Pose};
use crate::scenegeom::PointCloud;
use crate::schedule::{NoiseSchedule, ScheduleError};
use ndarray::{Array1, Array2, Axis};
use network::{BatchInput, COND_DIM, OUT_DIM, POSE_DIM};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("training needs at least one demo")]
    EmptyDataset,
    #[error("loss diverged to {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Igso3(#[from] Igso3Error),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("checkpoint version {0} not supported (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint layer shapes are inconsistent")]
    Shapes,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Encoder outputs for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub phi_p: Array1<f64>,
    pub phi_a: Array1<f64>,
    pub phi_b: Array1<f64>,
    pub phi_l: Array1<f64>,
    pub phi_t: Array1<f64>,
}

impl FeatureBundle {
    pub fn is_finite(&self) -> bool {
        [&self.phi_p, &self.phi_a, &self.phi_b, &self.phi_l, &self.phi_t]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    pub fn of(s: &NoiseSchedule) -> Self {
        ScheduleParams {
            steps: s.steps(),
            beta_min: s.beta_min,
            beta_max: s.beta_max,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

pub(crate) fn cloud_matrix(c: &PointCloud) -> Array2<f64> {
    Array2::from_shape_fn((c.len(), 3), |(i, k)| c.points[i][k])
}

fn pose_row(p: &Pose) -> Array2<f64> {
    Array2::from_shape_vec((1, POSE_DIM), p.to_flat().to_vec()).unwrap()
}

/// Flattened pose through the 12→64→64 encoder.
pub fn encode_pose(pose: &Pose, params: &DenoiserParams) -> Array1<f64> {
    let h = pose_row(pose).dot(&params.pose1.w.t()) + &params.pose1.b;
    let h = h.mapv(|x| x / (1.0 + (-x).exp()));
    (h.dot(&params.pose2.w.t()) + &params.pose2.b).row(0).to_owned()
}

/// Shared per-point layers and max pooling; rejects empty clouds.
pub fn encode_cloud(cloud: &PointCloud, kind: CloudKind, params: &DenoiserParams) -> Result<Array1<f64>, DenoiserError> {
    if cloud.is_empty() {
        return Err(DenoiserError::EmptyCloud);
    }
    Ok(params.cloud_forward(kind, &cloud_matrix(cloud)).0)
}

pub fn encode_condition(emb: &ConditionEmbedding, params: &DenoiserParams) -> Array1<f64> {
    params.cond.w.dot(&Array1::from(emb.vec.clone())) + &params.cond.b
}

/// Sinusoidal timestep features; `total` only bounds `t`.
pub fn encode_timestep(t: usize, total: usize) -> Array1<f64> {
    debug_assert!(t < total);
    timestep_features(t)
}

/// Runs the gate and head on a precomputed bundle. `bundle.phi_p` must be
/// the encoding of `noisy_pose`.
pub fn predict_noise(bundle: &FeatureBundle, noisy_pose: &Pose, params: &DenoiserParams) -> NoisePair {
    let feats = [&bundle.phi_p, &bundle.phi_a, &bundle.phi_b, &bundle.phi_l, &bundle.phi_t];
    let z: Array1<f64> = feats.iter().flat_map(|v| v.iter().copied()).collect();
    let a = params.agent.w.dot(&z) + &params.agent.b;
    let scale = (network::GATE_DIM as f64).sqrt();
    let scores: Vec<f64> = feats
        .iter()
        .zip(&params.keys)
        .map(|(f, k)| a.dot(&k.w.dot(*f)) / scale)
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let mut x: Vec<f64> = Vec::with_capacity(network::HEAD_IN);
    for (f, w) in feats.iter().zip(&e) {
        x.extend(f.iter().map(|v| v * 5.0 * w / sum));
    }
    x.extend(noisy_pose.to_flat());
    let silu = |v: f64| v / (1.0 + (-v).exp());
    let h1 = (params.head1.w.dot(&Array1::from(x)) + &params.head1.b).mapv(silu);
    let h2 = (params.head2.w.dot(&h1) + &params.head2.b).mapv(silu);
    let y = params.head3.w.dot(&h2) + &params.head3.b;
    NoisePair::from_array(&[y[0], y[1], y[2], y[3], y[4], y[5]])
}

/// A trained network with everything needed to use it: schedule,
/// normalization and the condition registry. Serialized as the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub version: u32,
    pub params: DenoiserParams,
    pub schedule: ScheduleParams,
    pub normalization: Normalization,
    pub registry: ConditionRegistry,
}

impl Denoiser {
    /// Untrained network with seeded random weights.
    pub fn random(seed: u64, sched: &NoiseSchedule) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Denoiser {
            version: CHECKPOINT_VERSION,
            params: DenoiserParams::init(&mut rng),
            schedule: ScheduleParams::of(sched),
            normalization: Normalization::default(),
            registry: default_registry().clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DenoiserError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DenoiserError> {
        let d: Denoiser = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if d.version != CHECKPOINT_VERSION {
            return Err(DenoiserError::Version(d.version));
        }
        if !d.params.check_shapes() {
            return Err(DenoiserError::Shapes);
        }
        Ok(d)
    }

    /// Fixes scene clouds (world/mug frames, meters) and the condition.
    pub fn bind(&self, mug_cloud: &PointCloud, rack_cloud: &PointCloud, condition: ConditionId) -> Result<BoundDenoiser<'_>, DenoiserError> {
        let emb = self.registry.get(condition)?;
        let n = &self.normalization;
        Ok(BoundDenoiser {
            net: self,
            mug_feat: encode_cloud(&n.mug_cloud_to_net(mug_cloud), CloudKind::Mug, &self.params)?,
            rack_feat: encode_cloud(&n.rack_cloud_to_net(rack_cloud), CloudKind::Rack, &self.params)?,
            cond: Array1::from(emb.vec.clone()),
        })
    }

    /// Bind by condition keyword; unknown words are rejected.
    pub fn bind_named(&self, mug_cloud: &PointCloud, rack_cloud: &PointCloud, condition: &str) -> Result<BoundDenoiser<'_>, DenoiserError> {
        self.bind(mug_cloud, rack_cloud, condition.parse()?)
    }
}

/// Network with scene and condition fixed; predicts noise for normalized
/// poses.
pub struct BoundDenoiser<'a> {
    pub net: &'a Denoiser,
    mug_feat: Array1<f64>,
    rack_feat: Array1<f64>,
    cond: Array1<f64>,
}

impl BoundDenoiser<'_> {
    pub fn bundle(&self, noisy: &Pose, t: usize) -> FeatureBundle {
        let p = &self.net.params;
        FeatureBundle {
            phi_p: encode_pose(noisy, p),
            phi_a: self.mug_feat.clone(),
            phi_b: self.rack_feat.clone(),
            phi_l: p.cond.w.dot(&self.cond) + &p.cond.b,
            phi_t: timestep_features(t),
        }
    }
}

impl NoisePredictor for BoundDenoiser<'_> {
    fn predict_noise(&self, noisy: &[Pose], t: usize) -> Vec<NoisePair> {
        let n = noisy.len();
        let mut poses = Array2::zeros((n, POSE_DIM));
        for (r, p) in noisy.iter().enumerate() {
            for (k, v) in p.to_flat().iter().enumerate() {
                poses[[r, k]] = *v;
            }
        }
        let cond = self.cond.view().insert_axis(Axis(0));
        let cond = cond.broadcast((n, COND_DIM)).unwrap().to_owned();
        let mug = [self.mug_feat.clone()];
        let rack = [self.rack_feat.clone()];
        let input = BatchInput {
            poses,
            steps: vec![t; n],
            cond,
            mug_feats: &mug,
            rack_feats: &rack,
            mug_idx: vec![0; n],
            rack_idx: vec![0; n],
        };
        let (y, _) = self.net.params.head_forward(&input);
        y.outer_iter()
            .map(|r| {
                let a: [f64; OUT_DIM] = std::array::from_fn(|k| r[k]);
                NoisePair::from_array(&a)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{generate_demos, preset_scene_with};
    use crate::rotmath::sample_haar;
    use crate::scenegeom::RackKind;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> DenoiserParams {
        DenoiserParams::init(&mut ChaCha8Rng::seed_from_u64(3))
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud {
            points: (0..n)
                .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.0..0.1)))
                .collect(),
        }
    }

    #[test]
    fn pose_encoder_examples() {
        let p = params();
        let a = encode_pose(&Pose::identity(), &p);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|x| x.is_finite()));
        assert_eq!(a, encode_pose(&Pose::identity(), &p));
        let b = encode_pose(&Pose::from_translation(Vector3::new(1e-9, 0.0, 0.0)), &p);
        assert!((&a - &b).mapv(f64::abs).sum() < 1e-6);
        let zero = p.zeros_like();
        assert!(encode_pose(&Pose::identity(), &zero).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cloud_encoder_is_symmetric() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cloud(&mut rng, 50);
        let f = encode_cloud(&c, CloudKind::Mug, &p).unwrap();
        let mut shuffled = c.clone();
        shuffled.points.reverse();
        shuffled.points.swap(3, 17);
        assert_eq!(encode_cloud(&shuffled, CloudKind::Mug, &p).unwrap(), f);
        let mut doubled = c.clone();
        doubled.points.extend(c.points.iter().copied());
        assert_eq!(encode_cloud(&doubled, CloudKind::Mug, &p).unwrap(), f);
        let one = PointCloud { points: vec![c.points[0]] };
        let many = PointCloud { points: vec![c.points[0]; 9] };
        assert_eq!(
            encode_cloud(&one, CloudKind::Rack, &p).unwrap(),
            encode_cloud(&many, CloudKind::Rack, &p).unwrap()
        );
        assert!(matches!(
            encode_cloud(&PointCloud { points: vec![] }, CloudKind::Mug, &p),
            Err(DenoiserError::EmptyCloud)
        ));
    }

    #[test]
    fn bundle_path_matches_batched_path() {
        let sched = NoiseSchedule::default();
        let d = Denoiser::random(5, &sched);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mc, rc) = (cloud(&mut rng, 30), cloud(&mut rng, 40));
        let bound = d.bind(&mc, &rc, ConditionId::Higher).unwrap();
        let poses: Vec<Pose> = (0..3)
            .map(|_| Pose::new(sample_haar(&mut rng), Vector3::new(0.1, -0.2, 0.05)))
            .collect();
        let batched = bound.predict_noise(&poses, 42);
        for (p, b) in poses.iter().zip(&batched) {
            let bundle = bound.bundle(p, 42);
            assert!(bundle.is_finite());
            let single = predict_noise(&bundle, p, &d.params);
            assert!((single.eps_r - b.eps_r).norm() < 1e-12 && (single.eps_t - b.eps_t).norm() < 1e-12);
            assert_eq!(single, predict_noise(&bundle, p, &d.params));
        }
        assert!(d.bind_named(&mc, &rc, "red").is_err());
    }

    #[test]
    fn output_is_lipschitz_in_translation() {
        let sched = NoiseSchedule::default();
        let d = Denoiser::random(6, &sched);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mc, rc) = (cloud(&mut rng, 30), cloud(&mut rng, 40));
        let bound = d.bind(&mc, &rc, ConditionId::Arbitrary).unwrap();
        for _ in 0..20 {
            let p = Pose::new(sample_haar(&mut rng), Vector3::new(rng.random_range(-0.3..0.3), 0.1, 0.0));
            let delta = 1e-3 * rng.random::<f64>();
            let q = p.translated(&Vector3::new(delta, 0.0, 0.0));
            let t = rng.random_range(0..200);
            let (a, b) = (bound.predict_noise(&[p], t)[0], bound.predict_noise(&[q], t)[0]);
            let change = ((a.eps_r - b.eps_r).norm_squared() + (a.eps_t - b.eps_t).norm_squared()).sqrt();
            assert!(change <= 100.0 * delta);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let sched = NoiseSchedule::default();
        let d = Denoiser::random(7, &sched);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        d.save(&path).unwrap();
        assert_eq!(Denoiser::load(&path).unwrap(), d);
        let mut old = d.clone();
        old.version = 0;
        old.save(&path).unwrap();
        assert!(matches!(Denoiser::load(&path), Err(DenoiserError::Version(0))));
    }

    #[test]
    fn training_rejects_empty_and_is_deterministic() {
        let sched = NoiseSchedule::default();
        assert!(matches!(train(&[], &sched, &TrainConfig::default()), Err(DenoiserError::EmptyDataset)));
        let scene = preset_scene_with('a', RackKind::LongShort, &[ConditionId::Longer]);
        let demos = generate_demos(&[scene], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = TrainConfig {
            steps: 30,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(&demos, &sched, &cfg).unwrap();
        let b = train(&demos, &sched, &cfg).unwrap();
        assert!(a.losses.iter().all(|l| l.loss.is_finite()));
        assert_eq!(
            a.losses.last().unwrap().loss.to_bits(),
            b.losses.last().unwrap().loss.to_bits()
        );
    }

    #[test]
    fn overfits_a_single_demo() {
        let sched = NoiseSchedule::default();
        let scene = preset_scene_with('b', RackKind::HighLow, &[ConditionId::Lower]);
        let demos = generate_demos(&[scene], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = TrainConfig {
            steps: 2000,
            log_every: 100,
            ..TrainConfig::default()
        };
        let out = train(&demos, &sched, &cfg).unwrap();
        let first = out.losses[0].loss;
        let last = out.losses.last().unwrap().loss;
        assert!(last < 0.05 && last < first, "{first} -> {last}");
    }

    #[test]
    fn huge_learning_rate_aborts() {
        let sched = NoiseSchedule::default();
        let scene = preset_scene_with('a', RackKind::LongShort, &[ConditionId::Longer]);
        let demos = generate_demos(&[scene], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 8,
            lr: 1e6,
            clip_norm: 1e12,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&demos, &sched, &cfg), Err(DenoiserError::Diverged { .. })));
    }
}

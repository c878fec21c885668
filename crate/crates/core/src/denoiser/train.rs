//! Minibatch training on the noise-prediction loss.

use super::network::{DenoiserParams, TrainBatch, COND_DIM, OUT_DIM, POSE_DIM};
use super::{cloud_matrix, ConditionRegistry, Denoiser, DenoiserError, ScheduleParams};
use crate::harness::dataset::{Demo, Normalization};
use crate::igso3::TableCache;
use crate::posediff::forward_pose;
use crate::schedule::NoiseSchedule;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Heavy-ball momentum SGD.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    /// Cosine decay from `lr` down to `lr · final_lr_frac`.
    pub final_lr_frac: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 64,
            lr: 1e-3,
            momentum: 0.9,
            clip_norm: 10.0,
            optimizer: Optimizer::Adam,
            final_lr_frac: 0.05,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    /// Mean batch loss since the previous log point.
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: Denoiser,
    pub losses: Vec<LossPoint>,
}

pub const DIVERGENCE_LOSS: f64 = 1e3;

struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn global_norm(g: &DenoiserParams) -> f64 {
    g.tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn apply_update(params: &mut DenoiserParams, grad: &mut DenoiserParams, st: &mut OptState, cfg: &TrainConfig, lr: f64) {
    let norm = global_norm(grad);
    let clip = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
    st.t += 1;
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let bc1 = 1.0 - b1.powi(st.t);
    let bc2 = 1.0 - b2.powi(st.t);
    for (ti, (p, g)) in params.tensors_mut().into_iter().zip(grad.tensors_mut()).enumerate() {
        let m = &mut st.m[ti];
        let v = &mut st.v[ti];
        for k in 0..p.len() {
            let gk = g[k] * clip;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    m[k] = cfg.momentum * m[k] + gk;
                    p[k] -= lr * m[k];
                }
                Optimizer::Adam => {
                    m[k] = b1 * m[k] + (1.0 - b1) * gk;
                    v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                    p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                }
            }
        }
    }
}

/// Distinct clouds of the dataset and each demo's index into them.
fn unique_clouds(demos: &[Demo], norm: &Normalization, mug: bool) -> (Vec<Array2<f64>>, Vec<usize>) {
    let mut uniq: Vec<&crate::scenegeom::PointCloud> = Vec::new();
    let mut idx = Vec::with_capacity(demos.len());
    for d in demos {
        let c = if mug { &d.mug_cloud } else { &d.rack_cloud };
        match uniq.iter().position(|u| *u == c) {
            Some(i) => idx.push(i),
            None => {
                idx.push(uniq.len());
                uniq.push(c);
            }
        }
    }
    let mats = uniq
        .iter()
        .map(|c| {
            let net = if mug { norm.mug_cloud_to_net(c) } else { norm.rack_cloud_to_net(c) };
            cloud_matrix(&net)
        })
        .collect();
    (mats, idx)
}

/// Trains from a fresh initialization drawn from `cfg.seed`.
pub fn train(demos: &[Demo], sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainOutcome, DenoiserError> {
    train_with_registry(demos, sched, cfg, super::condition::default_registry())
}

pub fn train_with_registry(
    demos: &[Demo],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    registry: &ConditionRegistry,
) -> Result<TrainOutcome, DenoiserError> {
    if demos.is_empty() {
        return Err(DenoiserError::EmptyDataset);
    }
    let norm = demos[0].normalization;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DenoiserParams::init(&mut rng);
    let tables = TableCache::new();
    let (mug_clouds, mug_of) = unique_clouds(demos, &norm, true);
    let (rack_clouds, rack_of) = unique_clouds(demos, &norm, false);
    let targets: Vec<_> = demos.iter().map(|d| norm.pose_to_net(&d.target_pose)).collect();
    let conds: Vec<Vec<f64>> = demos
        .iter()
        .map(|d| registry.get(d.condition).map(|e| e.vec.clone()))
        .collect::<Result<_, _>>()?;

    let n_tensors = params.tensors().len();
    let mut st = OptState {
        m: params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        v: params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        t: 0,
    };
    debug_assert_eq!(st.m.len(), n_tensors);

    let b = cfg.batch_size.max(1);
    let mut losses = Vec::new();
    let mut acc = (0.0, 0usize);
    for step in 0..cfg.steps {
        let mut poses = Array2::zeros((b, POSE_DIM));
        let mut tgt = Array2::zeros((b, OUT_DIM));
        let mut cond = Array2::zeros((b, COND_DIM));
        let mut steps = Vec::with_capacity(b);
        let (mut mi, mut ri) = (Vec::with_capacity(b), Vec::with_capacity(b));
        for r in 0..b {
            let i = rng.random_range(0..demos.len());
            let t = rng.random_range(0..sched.steps());
            let fwd = forward_pose(&targets[i], t, sched, &tables, &mut rng)?;
            for (k, v) in fwd.noisy_pose.to_flat().iter().enumerate() {
                poses[[r, k]] = *v;
            }
            for (k, v) in fwd.noise.to_array().iter().enumerate() {
                tgt[[r, k]] = *v;
            }
            for (k, v) in conds[i].iter().enumerate() {
                cond[[r, k]] = *v;
            }
            steps.push(t);
            mi.push(mug_of[i]);
            ri.push(rack_of[i]);
        }
        let batch = TrainBatch {
            poses,
            steps,
            cond,
            mug_clouds: mug_clouds.clone(),
            rack_clouds: rack_clouds.clone(),
            mug_idx: mi,
            rack_idx: ri,
            targets: tgt,
        };
        let (loss, mut grad) = params.loss_and_grad(&batch);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(DenoiserError::Diverged { step, loss });
        }
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.lr * (cfg.final_lr_frac + (1.0 - cfg.final_lr_frac) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        apply_update(&mut params, &mut grad, &mut st, cfg, lr);
        acc.0 += loss;
        acc.1 += 1;
        if (step + 1) % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            losses.push(LossPoint {
                step: step + 1,
                loss: acc.0 / acc.1 as f64,
            });
            acc = (0.0, 0);
        }
    }
    if !params.is_finite() {
        return Err(DenoiserError::Diverged {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        model: Denoiser {
            version: super::CHECKPOINT_VERSION,
            params,
            schedule: ScheduleParams::of(sched),
            normalization: norm,
            registry: registry.clone(),
        },
        losses,
    })
}

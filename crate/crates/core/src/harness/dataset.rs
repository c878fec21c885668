//! Demonstrations: analytic hanging poses on every hook, validated by the
//! success predicate, with point clouds and condition embeddings attached.

use crate::denoiser::{embed_condition, ConditionEmbedding, ConditionId, ConditionRegistry};
use crate::posediff::Pose;
use crate::scenegeom::{
    hanging_pose, sample_surface, GeomError, MugSpec, PointCloud, RackKind, RackModel, RackSpec, SceneSpec,
    DEFAULT_CLOUD_POINTS, DEFAULT_RESOLUTION,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least one demo per hook")]
    NoDemos,
    #[error("generated pose for scene '{scene}' hook {hook} failed validation")]
    InvalidDemo { scene: String, hook: ConditionId },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("scene '{0}' not found")]
    UnknownScene(String),
}

/// Map from rack-frame meters to network units: `(x − offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vector3<f64>,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            offset: Vector3::new(0.0, 0.0, 0.3),
            scale: 1.0,
        }
    }
}

impl Normalization {
    pub fn pose_to_net(&self, p: &Pose) -> Pose {
        Pose::new(p.rotation, (p.translation - self.offset) / self.scale)
    }

    pub fn pose_from_net(&self, p: &Pose) -> Pose {
        Pose::new(p.rotation, p.translation * self.scale + self.offset)
    }

    /// Rack cloud into network units (mug clouds stay in the mug frame,
    /// only scaled).
    pub fn rack_cloud_to_net(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| (p - self.offset) / self.scale).collect(),
        }
    }

    pub fn mug_cloud_to_net(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| p / self.scale).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub scene: String,
    /// Hook the ground-truth pose hangs on.
    pub hook: ConditionId,
    pub condition: ConditionId,
    pub embedding: ConditionEmbedding,
    /// Ground-truth world pose of the mug.
    pub target_pose: Pose,
    /// Mug surface samples in the mug frame.
    pub mug_cloud: PointCloud,
    /// Rack surface samples in the world frame.
    pub rack_cloud: PointCloud,
    pub normalization: Normalization,
}

impl Demo {
    /// Same demo under a different language condition.
    pub fn with_condition(&self, id: ConditionId) -> Demo {
        Demo {
            condition: id,
            embedding: embed_condition(id),
            ..self.clone()
        }
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-scene seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Canonical clouds of a scene: fixed by the scene name, so data generation
/// and sampling see the same points.
pub fn scene_clouds(scene: &SceneSpec, n: usize) -> (PointCloud, PointCloud) {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(scene.name.as_bytes()));
    let mug = sample_surface(&scene.mug, n, &mut rng);
    let rack_local = sample_surface(&scene.rack, n, &mut rng);
    let rack = PointCloud {
        points: rack_local
            .points
            .iter()
            .map(|p| scene.rack.placement.transform_point(p))
            .collect(),
    };
    (mug, rack)
}

/// Named desk scenes: mug `a`/`b` with one of the rack archetypes.
pub fn preset_scene(mug: char, rack: RackKind) -> SceneSpec {
    let spec = if mug == 'b' { MugSpec::preset_b() } else { MugSpec::preset_a() };
    SceneSpec {
        name: format!("mug-{mug}/{}", rack.name()),
        mug: spec,
        rack: RackSpec::archetype(rack),
    }
}

/// Scene with a subset of an archetype's hooks.
pub fn preset_scene_with(mug: char, rack: RackKind, hooks: &[ConditionId]) -> SceneSpec {
    let mut s = preset_scene(mug, rack);
    s.rack = s.rack.with_hooks(hooks);
    let tag: Vec<&str> = hooks.iter().map(|h| h.as_str()).collect();
    s.name = format!("{}[{}]", s.name, tag.join(","));
    s
}

/// `per_hook` distinct valid hanging poses for every hook of every scene.
/// Slides are stratified along the usable hook span; roll and resting gap
/// are drawn uniformly.
pub fn generate_demos<R: Rng + ?Sized>(
    scenes: &[SceneSpec],
    per_hook: usize,
    rng: &mut R,
) -> Result<Vec<Demo>, DatasetError> {
    generate_demos_at(scenes, per_hook, DEFAULT_RESOLUTION, rng)
}

/// As [`generate_demos`], validating on a lattice of the given resolution.
pub fn generate_demos_at<R: Rng + ?Sized>(
    scenes: &[SceneSpec],
    per_hook: usize,
    resolution: f64,
    rng: &mut R,
) -> Result<Vec<Demo>, DatasetError> {
    if per_hook == 0 {
        return Err(DatasetError::NoDemos);
    }
    let norm = Normalization::default();
    let mut out = Vec::new();
    for scene in scenes {
        scene.validate()?;
        let model = RackModel::build(&scene.rack, resolution)?;
        let (mug_cloud, rack_cloud) = scene_clouds(scene, DEFAULT_CLOUD_POINTS);
        for hook in &scene.rack.hooks {
            let (lo, hi) = hook.slide_range(&scene.mug, scene.rack.post_radius);
            for k in 0..per_hook {
                let slide = lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / per_hook as f64;
                let roll = rng.random_range(-0.3..0.3);
                let gap = rng.random_range(0.0005..0.0015);
                let local = hanging_pose(&scene.mug, hook, slide, roll, gap);
                let world = scene.rack.placement.compose(&local);
                if !model.is_success(&scene.mug, &world, hook) {
                    return Err(DatasetError::InvalidDemo {
                        scene: scene.name.clone(),
                        hook: hook.id,
                    });
                }
                out.push(Demo {
                    scene: scene.name.clone(),
                    hook: hook.id,
                    condition: hook.id,
                    embedding: embed_condition(hook.id),
                    target_pose: world,
                    mug_cloud: mug_cloud.clone(),
                    rack_cloud: rack_cloud.clone(),
                    normalization: norm,
                });
            }
        }
    }
    Ok(out)
}

pub const DEMOS_FILE: &str = "demos.jsonl";
pub const SCENES_FILE: &str = "scenes.json";
pub const REGISTRY_FILE: &str = "registry.json";

/// Writes `demos.jsonl` (one record per line), `scenes.json` and
/// `registry.json` into `dir`.
pub fn save_dataset(dir: &Path, scenes: &[SceneSpec], demos: &[Demo], registry: &ConditionRegistry) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(DEMOS_FILE))?);
    for d in demos {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    fs::write(dir.join(SCENES_FILE), serde_json::to_string_pretty(scenes)?)?;
    fs::write(dir.join(REGISTRY_FILE), serde_json::to_string(registry)?)?;
    Ok(())
}

pub struct Dataset {
    pub scenes: Vec<SceneSpec>,
    pub demos: Vec<Demo>,
    pub registry: ConditionRegistry,
}

impl Dataset {
    pub fn scene(&self, name: &str) -> Result<&SceneSpec, DatasetError> {
        self.scenes
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| DatasetError::UnknownScene(name.to_string()))
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let file = fs::File::open(dir.join(DEMOS_FILE))?;
    let mut demos = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            demos.push(serde_json::from_str(&line)?);
        }
    }
    let scenes = serde_json::from_str(&fs::read_to_string(dir.join(SCENES_FILE))?)?;
    let registry = serde_json::from_str(&fs::read_to_string(dir.join(REGISTRY_FILE))?)?;
    Ok(Dataset { scenes, demos, registry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::condition::default_registry;
    use crate::rotmath::geodesic_distance;
    use crate::scenegeom::is_success;

    fn two_by_two() -> Vec<SceneSpec> {
        vec![preset_scene('a', RackKind::HighLow), preset_scene('b', RackKind::HighLow)]
    }

    #[test]
    fn generator_yields_valid_distinct_demos() {
        let scenes = two_by_two();
        let demos = generate_demos(&scenes, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(demos.len(), 20);
        for d in &demos {
            let scene = scenes.iter().find(|s| s.name == d.scene).unwrap();
            let hook = scene.rack.hook(d.hook).unwrap();
            assert!(is_success(&scene.mug, &d.target_pose, &scene.rack, hook, DEFAULT_RESOLUTION));
            assert_eq!(d.embedding, embed_condition(d.condition));
        }
        for (i, a) in demos.iter().enumerate() {
            for b in &demos[i + 1..] {
                if a.scene == b.scene && a.hook == b.hook {
                    let dr = geodesic_distance(&a.target_pose.rotation, &b.target_pose.rotation);
                    let dt = (a.target_pose.translation - b.target_pose.translation).norm();
                    assert!(dr > 1e-3 || dt > 1e-3);
                }
            }
        }
        let again = generate_demos(&scenes, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(demos, again);
    }

    #[test]
    fn every_archetype_generates() {
        let scenes: Vec<SceneSpec> = RackKind::ALL
            .iter()
            .flat_map(|&k| [preset_scene('a', k), preset_scene('b', k)])
            .collect();
        let demos = generate_demos(&scenes, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(demos.len(), 60);
    }

    #[test]
    fn pushing_down_breaks_success() {
        let scenes = vec![preset_scene('a', RackKind::LongShort), preset_scene('b', RackKind::CurvedStraight)];
        let demos = generate_demos(&scenes, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for d in &demos {
            let scene = scenes.iter().find(|s| s.name == d.scene).unwrap();
            let model = RackModel::build(&scene.rack, DEFAULT_RESOLUTION).unwrap();
            let hook = scene.rack.hook(d.hook).unwrap();
            let pushed = d.target_pose.translated(&Vector3::new(0.0, 0.0, -0.003));
            assert!(!model.is_success(&scene.mug, &pushed, hook), "{} {}", d.scene, d.hook);
        }
    }

    #[test]
    fn dataset_roundtrips_bit_exactly() {
        let scenes = vec![preset_scene('a', RackKind::HorizontalTilted)];
        let demos = generate_demos(&scenes, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &scenes, &demos, default_registry()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.demos, demos);
        assert_eq!(back.scenes, scenes);
        assert_eq!(&back.registry, default_registry());
        let bits = |d: &Demo| -> Vec<u64> {
            d.target_pose
                .to_flat()
                .iter()
                .chain(d.mug_cloud.points.iter().flat_map(|p| p.iter()))
                .chain(d.embedding.vec.iter())
                .map(|x| x.to_bits())
                .collect()
        };
        for (a, b) in demos.iter().zip(&back.demos) {
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn normalization_inverts() {
        let n = Normalization::default();
        let p = Pose::from_translation(Vector3::new(0.1, -0.05, 0.31));
        assert_eq!(n.pose_from_net(&n.pose_to_net(&p)).translation, p.translation);
    }
}

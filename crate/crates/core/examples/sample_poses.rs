//! Train briefly on one hook, then draw target poses and check them.

use hangdiff::denoiser::{train, ConditionId, TrainConfig};
use hangdiff::harness::dataset::{generate_demos, preset_scene_with};
use hangdiff::harness::eval::sample_poses;
use hangdiff::posediff::PosteriorVariant;
use hangdiff::scenegeom::{RackKind, RackModel, DEFAULT_RESOLUTION};
use hangdiff::schedule::NoiseSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = preset_scene_with('a', RackKind::HighLow, &[ConditionId::Higher]);
    let demos = generate_demos(&[scene.clone()], 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig {
        steps: 4000,
        ..TrainConfig::default()
    };
    let model = train(&demos, &NoiseSchedule::default(), &cfg)?.model;
    let rack = RackModel::build(&scene.rack, DEFAULT_RESOLUTION)?;
    let hook = rack.spec.hook(ConditionId::Higher)?.clone();
    let s = sample_poses(&model, &demos[0], ConditionId::Higher, 10, 42, PosteriorVariant::default())?;
    for p in &s.poses {
        let t = p.translation;
        println!("({:+.4}, {:+.4}, {:+.4})  hangs without refinement: {}", t.x, t.y, t.z, rack.is_success(&scene.mug, p, &hook));
    }
    Ok(())
}

//! Refine the same trained-model predictions under several jitter steps and
//! print success rate and mean refinement count as CSV.

use hangdiff::denoiser::{train, ConditionId, TrainConfig};
use hangdiff::harness::dataset::{generate_demos, preset_scene_with};
use hangdiff::harness::eval::{ablate_timestep, EvalConfig, EvalMode};
use hangdiff::scenegeom::RackKind;
use hangdiff::schedule::NoiseSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = preset_scene_with('b', RackKind::LongShort, &[ConditionId::Shorter]);
    let demos = generate_demos(&[scene.clone()], 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig {
        steps: 4000,
        ..TrainConfig::default()
    };
    let model = train(&demos, &NoiseSchedule::default(), &cfg)?.model;
    let eval = EvalConfig {
        trials: 50,
        ..EvalConfig::default()
    };
    println!("t_jitter,success_rate,t_avg");
    for row in ablate_timestep(&model, &scene, &demos, &EvalMode::Single, &[1, 3, 6, 10], &eval)? {
        println!("{},{:.2},{:.2}", row.t_jitter, row.success_rate, row.t_avg);
    }
    Ok(())
}

//! Train the noise predictor on one hook and save a checkpoint.
//!
//! `cargo run --release --example train_denoiser -- [steps]`

use hangdiff::denoiser::{train, ConditionId, Denoiser, TrainConfig};
use hangdiff::harness::dataset::{generate_demos, preset_scene_with};
use hangdiff::scenegeom::RackKind;
use hangdiff::schedule::NoiseSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3000);
    let scene = preset_scene_with('a', RackKind::LongShort, &[ConditionId::Longer]);
    let demos = generate_demos(&[scene], 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig {
        steps,
        log_every: (steps / 10).max(1),
        ..TrainConfig::default()
    };
    let out = train(&demos, &NoiseSchedule::default(), &cfg)?;
    for l in &out.losses {
        println!("step {:>6}  loss {:.5}", l.step, l.loss);
    }
    let path = std::env::temp_dir().join("hangdiff-example-model.json");
    out.model.save(&path)?;
    let back = Denoiser::load(&path)?;
    println!("{} parameters saved to {} (reload identical: {})", back.params.param_count(), path.display(), back == out.model);
    Ok(())
}

//! Trial reports for single, multi-hook and language-specified sampling,
//! using the exact-noise mixture oracle as the pose generator.

use hangdiff::harness::dataset::{generate_demos, preset_scene};
use hangdiff::harness::eval::{evaluate, mode_coverage, EvalConfig, EvalMode, MixtureOracle};
use hangdiff::scenegeom::RackKind;
use hangdiff::schedule::NoiseSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = preset_scene('a', RackKind::HighLow);
    let demos = generate_demos(&[scene.clone()], 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let oracle = MixtureOracle::from_demos(&demos, NoiseSchedule::default());
    let cfg = EvalConfig {
        trials: 30,
        ..EvalConfig::default()
    };
    let modes = [
        EvalMode::Multi,
        EvalMode::Specified("higher".into()),
        EvalMode::Specified("lower".into()),
        EvalMode::Specified("red".into()),
    ];
    for mode in &modes {
        let r = evaluate(&oracle, &scene, &demos, mode, &cfg)?;
        println!(
            "{mode:?}: SR_nt {:.2}  SR_total {:.2}  T_avg {:.2}  coverage {:?}",
            r.sr_nt,
            r.sr_total,
            r.t_avg,
            mode_coverage(&r)
        );
    }
    Ok(())
}

//! Noise a pose with the forward chain, then walk it back with an exact
//! noise predictor and measure how close the chain lands.

use hangdiff::igso3::TableCache;
use hangdiff::posediff::{forward_pose, sample_target_pose, OracleDenoiser, Pose};
use hangdiff::rotmath::{geodesic_distance, sample_haar};
use hangdiff::schedule::NoiseSchedule;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = NoiseSchedule::default();
    let tables = TableCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = Pose::new(sample_haar(&mut rng), Vector3::new(0.05, -0.1, 0.02));

    let noisy = forward_pose(&target, sched.steps() - 1, &sched, &tables, &mut rng)?;
    println!(
        "after {} forward steps: rotation {:.3} rad away, translation {:.3} away",
        sched.steps(),
        geodesic_distance(&noisy.noisy_pose.rotation, &target.rotation),
        (noisy.noisy_pose.translation - target.translation).norm()
    );

    let oracle = OracleDenoiser::new(target, &sched);
    for seed in 0..5 {
        let p = sample_target_pose(&oracle, &sched, &tables, &mut ChaCha8Rng::seed_from_u64(seed))?;
        println!(
            "seed {seed}: rotation error {:.2e}, translation error {:.2e}",
            geodesic_distance(&p.rotation, &target.rotation),
            (p.translation - target.translation).norm()
        );
    }
    Ok(())
}

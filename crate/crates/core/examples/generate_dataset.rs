//! Generate demonstrations for two mugs on two racks and write them to disk.

use hangdiff::denoiser::default_registry;
use hangdiff::harness::dataset::{generate_demos, load_dataset, preset_scene, save_dataset};
use hangdiff::scenegeom::RackKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenes: Vec<_> = ['a', 'b']
        .into_iter()
        .flat_map(|m| [preset_scene(m, RackKind::LongShort), preset_scene(m, RackKind::HighLow)])
        .collect();
    let demos = generate_demos(&scenes, 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let dir = std::env::temp_dir().join("hangdiff-demo-data");
    save_dataset(&dir, &scenes, &demos, default_registry())?;
    let back = load_dataset(&dir)?;
    println!("{} demos written to {}, reload identical: {}", demos.len(), dir.display(), back.demos == demos);
    for d in demos.iter().step_by(5) {
        let t = d.target_pose.translation;
        println!("  {:<22} {:<8} at ({:+.3}, {:+.3}, {:+.3})", d.scene, d.hook.as_str(), t.x, t.y, t.z);
    }
    Ok(())
}

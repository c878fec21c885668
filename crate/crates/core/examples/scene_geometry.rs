//! Build a mug and a rack, hang the mug on each hook and check the success
//! predicate, then push it into the hook to see the overlap.

use hangdiff::scenegeom::{hanging_pose, MugSpec, RackKind, RackModel, RackSpec, DEFAULT_RESOLUTION};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mug = MugSpec::preset_a();
    for kind in RackKind::ALL {
        let rack = RackModel::build(&RackSpec::archetype(kind), DEFAULT_RESOLUTION)?;
        println!("{:<24} rack volume {:.3e} m^3", kind.name(), rack.volume());
        for hook in &rack.spec.hooks {
            let (lo, hi) = hook.slide_range(&mug, rack.spec.post_radius);
            let local = hanging_pose(&mug, hook, 0.5 * (lo + hi), 0.0, 0.001);
            let world = rack.to_world(&local);
            let pushed = world.translated(&Vector3::new(0.0, 0.0, -0.004));
            println!(
                "  {:<12} hangs: {}  pushed 4 mm down: {} (overlap {:.2e} m^3)",
                hook.id.as_str(),
                rack.is_success(&mug, &world, hook),
                rack.is_success(&mug, &pushed, hook),
                rack.overlap_volume(&mug.solid(), &rack.to_rack_frame(&pushed))
            );
        }
    }
    Ok(())
}

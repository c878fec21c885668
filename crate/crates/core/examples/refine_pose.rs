//! Push a valid hanging pose into the hook and let the refinement stage
//! recover a collision-free one.

use hangdiff::denoiser::ConditionId;
use hangdiff::harness::Normalization;
use hangdiff::refine::{gdc_scan, refine_pose, RefineConfig};
use hangdiff::scenegeom::{hanging_pose, MugSpec, RackKind, RackModel, RackSpec, DEFAULT_RESOLUTION};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mug = MugSpec::preset_b();
    let rack = RackModel::build(&RackSpec::archetype(RackKind::CurvedStraight), DEFAULT_RESOLUTION)?;
    let hook = rack.spec.hook(ConditionId::Curved)?.clone();
    let good = rack.to_world(&hanging_pose(&mug, &hook, 0.06, 0.1, 0.001));
    let g = gdc_scan(&rack, &mug.solid(), &good, 0.02, 21);
    println!("ground truth: c_gdc {:.3e}, first contact at {:?} m", g.c_gdc, g.z_contact);

    for depth in [0.002, 0.004, 0.008] {
        let bad = good.translated(&Vector3::new(0.0, 0.0, -depth));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = refine_pose(&mug, &rack, &hook, &bad, &Normalization::default(), &RefineConfig::default(), &mut rng);
        println!(
            "pushed {:.0} mm: ok before {}, refined {} after {} iterations, c_gdc {:.3e}, z_opt {:.3}",
            depth * 1e3,
            rack.is_success(&mug, &bad, &hook),
            r.succeeded,
            r.iterations,
            r.c_gdc,
            r.z_opt
        );
    }
    Ok(())
}

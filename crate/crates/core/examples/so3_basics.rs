//! Exponential and logarithm maps, geodesic flow and distances on SO(3).

use hangdiff::rotmath::{exp_rotation, geodesic_distance, geodesic_flow, log_rotation, sample_haar};
use hangdiff::AxisAngle;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let v = AxisAngle(Vector3::new(0.3, -0.2, 0.9));
    let r = exp_rotation(&v);
    let back = log_rotation(&r);
    println!("angle {:.6}  log(exp(v)) - v = {:.2e}", r.angle(), (back.0 - v.0).norm());

    let half = geodesic_flow(0.5, &r);
    let twice = &half * &half;
    println!("flow(1/2) squared vs R: {:.2e}", geodesic_distance(&twice, &r));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = sample_haar(&mut rng);
    let b = sample_haar(&mut rng);
    println!("distance between two Haar draws: {:.4} rad", geodesic_distance(&a, &b));
}

//! IGSO(3) angle density, its table sampler and a KS check of the draws.

use hangdiff::igso3::{density, ks_statistic, IgSo3Table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for eps2 in [0.05, 0.5, 2.0] {
        let n = 2000;
        let h = PI / n as f64;
        let mass: f64 = (0..n).map(|i| density((i as f64 + 0.5) * h, eps2, 2000).unwrap() * h).sum();
        let table = IgSo3Table::with_defaults(eps2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws: Vec<f64> = (0..20_000).map(|_| table.sample_angle(&mut rng)).collect();
        let ks = ks_statistic(&mut draws, |w| table.cdf_at(w));
        println!("eps2 {eps2:<5} mass {mass:.5}  mean angle {:.4}  KS {ks:.4}", table.mean_angle());
    }
    Ok(())
}

//! The linear DDPM schedule and the tiny-noise refinement schedule.

use hangdiff::schedule::{AdjustSchedule, NoiseSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = NoiseSchedule::default();
    for t in [0, 50, 100, 150, s.steps() - 1] {
        println!("t {t:>3}  beta {:.5}  alpha_bar {:.5}  rot eps2 {:.5}", s.beta(t), s.alpha_bar(t), s.forward_eps2(t));
    }
    for t in [1, 3, 6, 10] {
        let adj = AdjustSchedule::with_t_jitter(t)?;
        println!("jitter step {t:>2}: std {:.5}", adj.jitter_std());
    }
    Ok(())
}

//! The fixed condition-embedding registry and its rejection of unknown words.

use hangdiff::denoiser::{default_registry, embed_condition_str, ConditionId};

fn main() {
    let reg = default_registry();
    for id in ConditionId::ALL {
        let e = reg.get(id).unwrap();
        println!("{:<12} \"{}\"  first coords {:+.3} {:+.3}", id.as_str(), id.phrase(), e.vec[0], e.vec[1]);
    }
    match embed_condition_str("red") {
        Ok(_) => println!("unexpected: 'red' resolved"),
        Err(e) => println!("'red' rejected: {e}"),
    }
}

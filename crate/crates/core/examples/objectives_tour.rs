//! Every objective on one batch: value, counters and tape depth.
//!
//! ```text
//! cargo run --release --example objectives_tour
//! ```

use fdsm::models::Model;
use fdsm::objectives::{self, Objective, ObjectiveInput};
use fdsm::toy::ToyDensity;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdsm::Result<()> {
    let model = Model::<f64>::energy_mlp(2, &[64, 64], 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = ToyDensity::mog8().sample_with(256, &mut rng);
    println!("{:<11} {:>14} {:>6} {:>6} {:>6} {:>5}", "objective", "value", "fwd", "first", "nested", "depth");
    for o in Objective::ALL {
        let input = ObjectiveInput::sample(o, x.clone(), 0.05, 0.1, &mut rng)?;
        let e = objectives::value(o, &model, &input)?;
        println!(
            "{:<11} {:>14.6} {:>6} {:>6} {:>6} {:>5}",
            o.token(),
            e.value,
            e.counters.forward_evals,
            e.counters.first_order_passes,
            e.counters.nested_passes,
            e.tape_depth
        );
    }
    Ok(())
}

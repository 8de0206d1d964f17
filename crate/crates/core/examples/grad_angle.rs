//! Angle between FD-SSM and SSM parameter gradients as the step shrinks.
//!
//! ```text
//! cargo run --release --example grad_angle
//! ```

use fdsm::bench::median;
use fdsm::models::Model;
use fdsm::objectives::{grad_angle, DirectionSample, Objective, ObjectiveInput};
use fdsm::toy::ToyDensity;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdsm::Result<()> {
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        let mut angles = Vec::new();
        for seed in 0..10 {
            let model = Model::<f64>::energy_mlp(2, &[64, 64], seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = ToyDensity::rings().sample_with(64, &mut rng);
            let input = ObjectiveInput::new(x).with_directions(DirectionSample::sample(64, 2, eps, &mut rng)?);
            angles.push(grad_angle(Objective::FdSsm, Objective::Ssm, &model, &input)?);
        }
        println!("eps {eps:<7} median angle {:.3e} deg", median(&mut angles));
    }
    Ok(())
}

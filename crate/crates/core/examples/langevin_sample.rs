//! Fit a small energy model to the 2-D Gaussian, then draw from it with
//! annealed Langevin dynamics and compare moments.
//!
//! ```text
//! cargo run --release --example langevin_sample
//! ```

use fdsm::langevin::{sample_model, AnnealSchedule};
use fdsm::toy::ToyDensity;
use fdsm::train::{train, TrainConfig};

fn main() -> fdsm::Result<()> {
    let config = TrainConfig {
        dataset: ToyDensity::gauss2(),
        hidden: vec![32, 32],
        iterations: 800,
        lr: 5e-3,
        eval_every: 800,
        ..TrainConfig::default()
    };
    let out = train::<f64>(&config)?;
    let last = out.log.last().expect("final row");
    println!("trained: fisher {:.4} +- {:.4}", last.fisher, last.fisher_se);

    let schedule = AnnealSchedule::geometric(1.0, 0.1, 5, 200, 0.01)?;
    let n = 4000;
    let xs = sample_model(&out.model, n, &schedule, 4.0, 7, 1)?;
    for j in 0..2 {
        let col: Vec<f64> = (0..n).map(|i| xs.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        println!("x{j}: mean {mean:+.3} (target 0), var {var:.3} (target 1)");
    }
    Ok(())
}

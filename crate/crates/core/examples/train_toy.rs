//! Train a score model on a 2-D toy density and print the evaluation log.
//!
//! ```text
//! cargo run --release --example train_toy -- [objective] [dataset] [iterations]
//! cargo run --release --example train_toy -- fd-ssm gauss2 1000
//! ```

use fdsm::train::{TrainConfig, Trainer, LOG_HEADER};

fn main() -> fdsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = TrainConfig {
        hidden: vec![64, 64],
        iterations: 1000,
        lr: 3e-3,
        eval_every: 100,
        ..TrainConfig::default()
    };
    config.set("objective", args.first().map_or("fd-ssm", String::as_str))?;
    config.set("dataset", args.get(1).map_or("gauss2", String::as_str))?;
    if let Some(n) = args.get(2) {
        config.set("iterations", n)?;
    }
    let mut trainer = Trainer::<f64>::new(config)?;
    println!("{LOG_HEADER}");
    trainer.run(|row| {
        println!("{}", row.to_csv());
        Ok(())
    })
}

//! Cost of order-T directional derivatives: nested reverse mode against the
//! batched and per-point parallel stencils.
//!
//! ```text
//! cargo run --release --example bench_order -- [t_max]
//! ```

use fdsm::bench::{bench_order_sweep, BenchOptions, CSV_HEADER};
use fdsm::models::Model;
use fdsm::Tensor;

fn main() -> fdsm::Result<()> {
    let t_max = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let model = Model::<f64>::energy_mlp(2, &[256, 256, 256], 0)?;
    let x = Tensor::vector(vec![0.3, -0.2]);
    let v = Tensor::vector(vec![0.06, 0.08]);
    let opts = BenchOptions { repeats: 10, warmups: 2 };
    println!("{CSV_HEADER}");
    for r in bench_order_sweep(&model, &x, &v, t_max, opts)? {
        println!("{}", r.to_csv());
    }
    Ok(())
}

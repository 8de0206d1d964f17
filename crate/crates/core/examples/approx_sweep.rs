//! Finite-difference vs nested-autodiff directional derivatives of a
//! Softplus MLP energy, over a shrinking step.
//!
//! ```text
//! cargo run --release --example approx_sweep
//! ```

use fdsm::bench::exact_model_directional;
use fdsm::models::Model;
use fdsm::stencil::{fd_directional, Stencil, SymmetricStencil};
use fdsm::Tensor;

fn main() -> fdsm::Result<()> {
    let model = Model::<f64>::energy_mlp(2, &[64, 64], 3)?;
    let x = Tensor::vector(vec![0.4, -0.3]);
    let unit = [0.6, 0.8];
    println!("T  eps      fd_raw          exact_raw       abs_err");
    for order in 1..=4 {
        let stencil = Stencil::from(SymmetricStencil::with_default_alphas(order)?);
        let exact = exact_model_directional(&model, &x, &Tensor::vector(unit.to_vec()), order)?.value;
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            let v = Tensor::vector(unit.iter().map(|u| u * eps).collect());
            let fd = fd_directional(|b: &Tensor<f64>| model.energy_values(b), &x, &v, &stencil)?;
            println!(
                "{order}  {eps:<7}  {:+.8e}  {exact:+.8e}  {:.3e}",
                fd.raw(),
                (fd.raw() - exact).abs()
            );
        }
    }
    Ok(())
}

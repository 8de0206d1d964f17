//! Symmetric stencil coefficients for orders 1 through 6.
//!
//! ```text
//! cargo run --example stencil_table
//! ```

use fdsm::stencil::{format_rational, Stencil, SymmetricStencil};

fn main() -> fdsm::Result<()> {
    for order in 1..=6 {
        let s = SymmetricStencil::with_default_alphas(order)?;
        let betas: Vec<String> = s
            .exact_betas()
            .map(|b| b.iter().map(format_rational).collect())
            .unwrap_or_else(|| s.betas().iter().map(|b| b.to_string()).collect());
        let evals = Stencil::from(s.clone()).evaluations();
        println!(
            "T={order} K={} alphas={:?} betas=[{}] evaluations={evals}",
            s.half_width_k(),
            s.alphas(),
            betas.join(", ")
        );
    }
    Ok(())
}

use super::tape::{Counters, GradMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Result of an exact `(v . grad)^T f(x)` evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DirectionalDerivative {
    pub value: f64,
    pub counters: Counters,
    /// Deepest nesting level recorded on the tape (equals `order`).
    pub tape_depth: u32,
}

/// Exact `T`-th order directional derivative `(v . grad_x)^T f(x)` by
/// `T`-fold nested reverse-mode differentiation.
///
/// `f` must produce a one-element output. The last pass does not record a
/// graph, so the deepest level on the tape is `order`.
pub fn exact_directional_derivative<T, F>(
    f: F,
    x: &Tensor<T>,
    v: &Tensor<T>,
    order: usize,
) -> Result<DirectionalDerivative>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    if order < 1 {
        return Err(Error::Argument(format!("derivative order must be >= 1, got {order}")));
    }
    if x.shape() != v.shape() {
        return Err(crate::error::shape_err("exact_directional_derivative", x.shape(), v.shape()));
    }
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vv = tape.constant(v.clone());
    let mut cur = f(&tape, xv)?.sum();
    for t in 1..=order {
        let mode = if t < order {
            GradMode::CreateGraph
        } else {
            GradMode::Detached
        };
        let g = tape.gradient(cur, &[xv], mode)?[0];
        cur = g.inner(vv)?;
    }
    Ok(DirectionalDerivative {
        value: cur.item().as_f64(),
        counters: tape.counters(),
        tape_depth: tape.max_level(),
    })
}

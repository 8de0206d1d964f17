//! Reverse-mode differentiation on an append-only tape, with nesting.

mod backward;
mod directional;
mod ops;
mod tape;

pub use directional::{exact_directional_derivative, DirectionalDerivative};
pub use tape::{Counters, GradMode, Tape, Var};

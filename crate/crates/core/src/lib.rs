pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod error;
pub mod langevin;
pub mod models;
pub mod objectives;
pub mod stencil;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

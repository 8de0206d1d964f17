use std::fmt;

/// Shape list wrapper so errors print as `[2, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("gradient requires a scalar output, got shape {0}")]
    NonScalarOutput(Shape),

    #[error("zero-norm gradient on side {side} of the angle comparison")]
    ZeroGradient { side: char },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite loss {value} at iteration {iter} (epsilon = {epsilon})")]
    NonFiniteLoss { iter: usize, value: f64, epsilon: f64 },

    #[error("sampler diverged at level {level}, step {step}: |coordinate| = {magnitude:e}")]
    Diverged {
        level: usize,
        step: usize,
        magnitude: f64,
    },

    #[error("unknown {kind} `{got}`; valid tokens: {valid}")]
    UnknownToken {
        kind: &'static str,
        got: String,
        valid: String,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: Shape(lhs.to_vec()),
        rhs: Shape(rhs.to_vec()),
    }
}

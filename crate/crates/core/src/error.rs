use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid query coordinate ({x}, {y}) for a {width}x{height} image")]
    InvalidCoordinate { x: f64, y: f64, width: u32, height: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid feature pyramid: {0}")]
    InvalidPyramid(String),

    #[error("invalid decoder parameters: {0}")]
    InvalidParams(String),

    #[error("query ({x}, {y}) lies outside the differentiable interior of the field")]
    NonDifferentiable { x: f64, y: f64 },

    #[error("invalid depth {0}: depth must be positive and finite")]
    InvalidDepth(f64),

    #[error("degenerate surface: tangent cross product norm {0:e} is below threshold")]
    DegenerateSurface(f64),

    #[error("distribution has zero total mass")]
    ZeroMass,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: loss {loss} exceeds limit {limit}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("constraint normal vanishes; point is not a regular value of the observable")]
    DegenerateNormal,

    #[error("projection onto the constraint manifold failed: {0}")]
    ProjectionFailure(String),

    #[error("no initial point found after {iterations} iterations (last residual {residual:e})")]
    InitializationFailure { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

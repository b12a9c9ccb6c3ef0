use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite coefficient evaluation at state {state:?} (t = {time})")]
    NumericalBlowup { state: Vec<f64>, time: f64 },

    #[error("no exit from ball of radius {radius} within {steps} steps")]
    ExitBudgetExceeded { radius: f64, steps: u64 },

    #[error("distributions live on different reference cells: {0}")]
    IncompatibleSupport(String),

    #[error("transition kernel is not row-stochastic: {0}")]
    InvalidKernel(String),

    #[error("declared coefficient bound violated: {0}")]
    BoundViolation(String),

    #[error("operation requires a non-degenerate diffusion (declared sup |sigma^-1|)")]
    DegenerateDiffusion,

    #[error("unsupported dimension {dim}: {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model spec parse error: {0}")]
    Parse(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

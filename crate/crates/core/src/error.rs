use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("argument order violated: t = {t} must not exceed t' = {t_prime}")]
    ArgumentOrder { t: f64, t_prime: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("singular conditioning: cannot condition on the state at t' = 0")]
    SingularConditioning,

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("simulation diverged at step {step} (t = {time})")]
    SimulationDiverged { step: usize, time: f64 },

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize, trace: Vec<f32> },

    #[error("window of length {window} does not fit a signal of length {len}")]
    Window { window: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

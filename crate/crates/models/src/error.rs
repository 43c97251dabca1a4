use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] massing_core::CoreError),

    #[error(transparent)]
    Neural(#[from] massing_neural::NeuralError),

    #[error("wrong model kind: expected {expected}, got {actual}")]
    Kind {
        expected: &'static str,
        actual: String,
    },

    #[error("sequence length {len} outside the supported range 1..={max}")]
    Length { len: usize, max: usize },

    #[error("need at least {needed} samples, got {got}")]
    Statistics { needed: usize, got: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

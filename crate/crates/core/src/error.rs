use thiserror::Error;

/// Errors produced by the domain, environment, agent, and dataset layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid constraints: {0}")]
    Constraint(String),

    #[error("voxel ({x}, {y}, {z}) out of bounds for {nx}x{ny}x{nz} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        z: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("replay mismatch at step {step}: {detail}")]
    Replay { step: usize, detail: String },

    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),

    #[error("malformed dataset: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

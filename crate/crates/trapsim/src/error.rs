use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {0} out of range (valid: 0..=8)")]
    InvalidAction(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gap {0} is not positive; vehicles overlap and the episode must already be over")]
    CollisionState(f64),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("demonstration rewards already augmented")]
    AlreadyAugmented,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

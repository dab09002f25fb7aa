use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlsError>;

#[derive(Debug, Error)]
pub enum FlsError {
    #[error("joint {joint} outside its limits (value {value})")]
    JointLimit { joint: usize, value: f64 },

    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("target outside the configured workspace")]
    OutsideWorkspace,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

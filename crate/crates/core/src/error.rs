use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("precision gate failed: {0}")]
    Precision(String),

    #[error("divergent trajectory: {0}")]
    StepSize(String),

    #[error("sampling quality: {0}")]
    SamplingQuality(String),

    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error("empty small-scale window: {0}")]
    WindowEmpty(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

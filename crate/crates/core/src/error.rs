use thiserror::Error;

/// Errors raised by the decomposition, geometry and scoring routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate periodic pattern vector: {0}")]
    DegeneratePattern(String),

    #[error("linear system is singular")]
    Singular,

    #[error("optimizer diverged at step {step} (objective = {value})")]
    Divergence { step: usize, value: f64 },

    #[error("no periodic structure found above the noise floor")]
    NoPeriodicity,

    #[error("image too small: edge {edge} < required {required}")]
    TooSmall { edge: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    /// A failure inside one stage of a multi-stage pipeline.
    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(stage: &str, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: expected length {expected}, found {found}"
        )))
    }
}

use thiserror::Error;

use crate::model::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file; `location` names the first offending row or byte offset.
    #[error("{message} at {location}")]
    Load { location: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("cannot stratify into {folds} folds: class {class} has only {count} members")]
    Stratification { class: usize, count: usize, folds: usize },

    #[error("label budget {requested} exceeds {available} available rows")]
    Budget { requested: usize, available: usize },

    #[error("class {0} has no labeled rows")]
    EmptyClass(usize),

    #[error("degenerate prototype for class {0}")]
    DegeneratePrototype(usize),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("training aborted: {reason}")]
    TrainingAborted { reason: String, trace: Box<TrainTrace> },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn load(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Wraps this error with a human-readable context string.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any [`Error::Context`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

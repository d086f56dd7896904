use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::{AttributeId, EntityId, ValueId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("entity {0} referenced by a link has no record")]
    MissingEntity(EntityId),

    #[error("entity id {0} appears in both record sets")]
    DuplicateEntity(EntityId),

    #[error("link set is empty")]
    EmptyLinks,

    #[error("value {value} is not in the domain of attribute {attribute}")]
    Domain {
        value: ValueId,
        attribute: AttributeId,
    },

    #[error("no evolution triples to train on")]
    EmptyEvolution,

    #[error("non-finite loss at epoch {epoch}; lower the learning rate (currently {learning_rate})")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },

    #[error("cross product of {size} pairs exceeds the cap of {cap}; configure a blocking attribute")]
    CrossProductTooLarge { size: u128, cap: u64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Invalid(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

/// Attach a stage name to an error, used by the experiment orchestration.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("categories with unknown kind: {}", .0.join(", "))]
    UnknownKind(Vec<String>),

    #[error("category {category} has {count} instances, needs at least {needed}")]
    InsufficientInstances {
        category: String,
        count: usize,
        needed: usize,
    },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("{head}: label {label} outside vocabulary of size {size}")]
    Label {
        head: String,
        label: usize,
        size: usize,
    },

    #[error("non-finite loss in head {head}")]
    NonFinite { head: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("image: {0}")]
    Image(String),

    #[error("evaluation: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(record: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            record: record.into(),
            message: message.to_string(),
        }
    }
}

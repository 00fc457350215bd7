use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("pooling over zero positions")]
    EmptyPool,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("could not parse model reply: {reason}")]
    Parse { reason: String, raw: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("LLM client error: {0}")]
    Client(String),

    #[error("no {model_id} embeddings for study {study_id}: expected exchange file {}", path.display())]
    MissingEmbeddings {
        model_id: String,
        study_id: String,
        path: PathBuf,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("record {ordinal}: {message}")]
    MalformedRecord { ordinal: usize, message: String },

    #[error("splits overlap on id {0:?}")]
    OverlappingSplits(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{op}: shape mismatch {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("embeddings line {line}: {message}")]
    Embeddings { line: usize, message: String },

    #[error("embedding endpoint: {0}")]
    Remote(String),

    #[error("empty answer")]
    EmptyAnswer,

    #[error("{0}")]
    Evaluation(String),

    #[error("all {0} grid-search trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("batch-size error: batch of {0} is too small for batch normalisation in train mode")]
    BatchSize(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty series: {0}")]
    EmptySeries(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("merge error: {0}")]
    Merge(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("degenerate class: class {0} has no samples")]
    DegenerateClass(usize),
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
    #[error("incomplete ensemble: {0}")]
    IncompleteEnsemble(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("missing metadata field `{0}`")]
    MissingField(String),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
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

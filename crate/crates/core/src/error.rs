use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("non-finite value produced at {0}")]
    NonFinite(String),

    #[error("schedule degenerate: α₁ ≤ 0 for embedding dimension {0}")]
    DegenerateSchedule(usize),

    #[error("parse error in {path} at row {row}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no observations")]
    NoObservations,

    #[error("insufficient observed entries: required {required}, available {available}")]
    InsufficientObservations { required: usize, available: usize },

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged ({0}); try a smaller learning rate")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o: {0}")]
    Stream(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches `path` to a pathless stream error.
    pub(crate) fn at(self, path: &std::path::Path) -> Self {
        match self {
            Error::Stream(source) => Error::io(path, source),
            other => other,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

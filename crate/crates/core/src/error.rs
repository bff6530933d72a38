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

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown document id {0:?} referenced by a QA record")]
    UnknownDocument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite vector component in {0:?}")]
    NonFinite(String),

    #[error("backend error ({backend}): {message}")]
    Backend {
        backend: String,
        message: String,
        retryable: bool,
    },

    #[error("could not parse {kind} output after {attempts} attempts: {message}")]
    Parse {
        kind: &'static str,
        attempts: usize,
        message: String,
    },

    #[error("template {name:?}: {message}")]
    Template { name: String, message: String },

    #[error("entity name is empty after normalization: {0:?}")]
    EmptyEntity(String),

    #[error("knowledge graph has no entities")]
    EmptyGraph,

    #[error("index build aborted: {failed} of {attempted} documents failed extraction")]
    TooManyFailures { failed: usize, attempted: usize },

    #[error("index archive version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt index archive: {0}")]
    CorruptArchive(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing environment variable {0}")]
    MissingEnv(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::Backend {
                retryable: true,
                ..
            }
        )
    }
}

use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing weight `{path}`")]
    MissingWeight { path: String },

    #[error("weight `{path}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file: bad magic bytes")]
    BadMagic,

    #[error("weight file: truncated while reading {entry}")]
    Truncated { entry: String },

    #[error("weight file: duplicate entry `{name}`")]
    DuplicateName { name: String },

    #[error("weight file: malformed entry `{entry}`: {detail}")]
    Malformed { entry: String, detail: String },

    #[error("image `{path}`: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment (missing or unreadable files)
    /// rather than of the data or configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

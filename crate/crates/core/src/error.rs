use std::fmt;
use std::path::PathBuf;

/// Line/column position inside a text input (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },

    #[error("unsupported feature at {pos}: {msg}")]
    UnsupportedFeature { pos: Pos, msg: String },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("protobuf decode error: {0}")]
    Decode(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("malformed witness: {0}")]
    Malformed(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("tool failure: {0}")]
    ToolFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn syntax(pos: Pos, msg: impl Into<String>) -> Self {
        Error::Syntax { pos, msg: msg.into() }
    }

    pub(crate) fn unsupported(pos: Pos, msg: impl Into<String>) -> Self {
        Error::UnsupportedFeature { pos, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

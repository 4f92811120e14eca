use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot read glyph image for font `{font_id}` letter `{letter}`: {message}")]
    Image {
        font_id: String,
        letter: char,
        message: String,
    },

    #[error("invalid format in {what}: {message}")]
    Format { what: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("empty part set")]
    EmptyPartSet,

    #[error("degenerate descriptor")]
    DegenerateDescriptor,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no block structure")]
    NoBlockStructure,

    #[error("{failed} of {total} fonts failed")]
    PartialFailure { failed: usize, total: usize },

    #[error("missing stage output {path}; run `fontparts {command}` first")]
    MissingStage { path: PathBuf, command: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::MissingStage { .. } => 1,
            Error::Numerical(_) | Error::NoBlockStructure => 3,
            _ => 2,
        }
    }
}

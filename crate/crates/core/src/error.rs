use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtdError>;

/// Errors raised anywhere in the toolkit.
///
/// Variants split into validation failures (bad input, bad config) and
/// runtime failures (I/O, numerical breakdown). The CLI maps the former to
/// exit code 1 and the latter to exit code 2.
#[derive(Debug, Error)]
pub enum CtdError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("split `{0}` is empty after rounding")]
    EmptySplit(&'static str),

    #[error("training set contains a single class")]
    SingleClass,

    #[error("example `{0}` appears in both the estimation and calibration splits")]
    Overlap(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value during {0}")]
    NonFinite(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CtdError {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        CtdError::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CtdError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True when the error stems from user-supplied input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            CtdError::Io { .. } | CtdError::Singular(_) | CtdError::NonFinite(_)
        )
    }
}

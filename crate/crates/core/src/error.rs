use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Each variant maps onto one of the CLI exit
/// codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension D = {dim} exceeds the exact-series ceiling {ceiling}; use the large-D approximation")]
    ExactCeiling { dim: u64, ceiling: u64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate channel: fidelity f = 0 collapses every density to a point mass at 1/D")]
    DegenerateChannel,

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("threshold unattainable: no shot count up to {ceiling} met the success predicate")]
    Unattainable { ceiling: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {kind}")]
    Parse {
        path: PathBuf,
        line: usize,
        kind: ParseErrorKind,
    },

    #[error("{path}: empty input")]
    EmptyFile { path: PathBuf },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Distinguishes malformed-line causes in ingested shot files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingHeader,
    BadHeader(String),
    BitstringWidth { expected: usize, found: usize },
    BitstringAlphabet(String),
    BadCount(String),
    NonPositiveCount(i64),
    DuplicateBitstring(String),
    Malformed(String),
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingHeader => write!(f, "missing `# n_qubits=<N> circuit=<id>` header"),
            Self::BadHeader(h) => write!(f, "malformed header `{h}`"),
            Self::BitstringWidth { expected, found } => {
                write!(f, "bitstring has {found} characters, expected {expected}")
            }
            Self::BitstringAlphabet(s) => write!(f, "bitstring `{s}` contains characters other than 0/1"),
            Self::BadCount(s) => write!(f, "count `{s}` is not an integer"),
            Self::NonPositiveCount(c) => write!(f, "count {c} is not positive"),
            Self::DuplicateBitstring(s) => write!(f, "duplicate bitstring `{s}`"),
            Self::Malformed(s) => write!(f, "malformed line `{s}`"),
        }
    }
}

impl ParseErrorKind {
    /// Stable short code used in diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingHeader => "E_HEADER_MISSING",
            Self::BadHeader(_) => "E_HEADER",
            Self::BitstringWidth { .. } => "E_WIDTH",
            Self::BitstringAlphabet(_) => "E_ALPHABET",
            Self::BadCount(_) => "E_COUNT",
            Self::NonPositiveCount(_) => "E_COUNT_SIGN",
            Self::DuplicateBitstring(_) => "E_DUPLICATE",
            Self::Malformed(_) => "E_MALFORMED",
        }
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 parse, 3 estimation, 4 config, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::EmptyFile { .. } | Self::Json(_) => 2,
            Self::EstimationFailed(_) | Self::Unattainable { .. } | Self::DegenerateChannel => 3,
            Self::Config(_) | Self::Domain(_) | Self::ExactCeiling { .. } => 4,
            Self::Numeric(_) | Self::Io { .. } => 1,
        }
    }
}

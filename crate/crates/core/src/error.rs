use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug)]
pub enum Error {
    Io {
        path: PathBuf,
        source: io::Error,
    },
    EmptyVocabulary,
    EmptyCorpus,
    DuplicateToken {
        token: String,
        first_line: usize,
        second_line: usize,
    },
    /// An id fell outside `[0, bound)`. `index` is the sequence position when known.
    IdOutOfRange {
        id: usize,
        bound: usize,
        index: Option<usize>,
    },
    InvalidMapper(String),
    /// The Random mapping has no fixed preimage structure.
    NotAFixedMapping,
    EmptyLattice,
    Shape(String),
    Infeasible {
        frames: usize,
        required: usize,
    },
    EnumerationGuard {
        paths: f64,
        limit: f64,
    },
    Config {
        key: String,
        message: String,
    },
    Parse {
        line: usize,
        message: String,
    },
    MissingKey {
        line: usize,
        key: String,
    },
    OversizedItem {
        index: usize,
        tokens: usize,
        capacity: usize,
    },
    NonFinite {
        step: usize,
    },
    MissingBaseline {
        vocab: usize,
    },
    Checkpoint(String),
    UnknownField {
        field: String,
        available: Vec<String>,
    },
    Suite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::EmptyVocabulary => write!(f, "vocabulary file is empty"),
            Error::EmptyCorpus => write!(f, "corpus is empty"),
            Error::DuplicateToken {
                token,
                first_line,
                second_line,
            } => write!(f, "duplicate token {token:?} at lines {first_line} and {second_line}"),
            Error::IdOutOfRange { id, bound, index } => match index {
                Some(i) => write!(f, "id {id} at index {i} out of range [0, {bound})"),
                None => write!(f, "id {id} out of range [0, {bound})"),
            },
            Error::InvalidMapper(msg) => write!(f, "invalid mapper: {msg}"),
            Error::NotAFixedMapping => {
                write!(f, "random mapping is not a fixed function of the token id")
            }
            Error::EmptyLattice => write!(f, "lattice has no frames or no classes"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Infeasible { frames, required } => write!(
                f,
                "infeasible CTC pair: {frames} frames but at least {required} required"
            ),
            Error::EnumerationGuard { paths, limit } => write!(
                f,
                "brute-force enumeration of {paths:.0} paths exceeds limit {limit:.0}"
            ),
            Error::Config { key, message } => write!(f, "config key `{key}`: {message}"),
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::MissingKey { line, key } => write!(f, "line {line}: missing key `{key}`"),
            Error::OversizedItem {
                index,
                tokens,
                capacity,
            } => write!(
                f,
                "item {index} has {tokens} target tokens, more than batch capacity {capacity}"
            ),
            Error::NonFinite { step } => write!(f, "non-finite parameter after step {step}"),
            Error::MissingBaseline { vocab } => {
                write!(f, "no genuine-label baseline row (L = V) for V = {vocab}")
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
            Error::UnknownField { field, available } => {
                write!(f, "unknown field `{field}`; available: {}", available.join(", "))
            }
            Error::Suite(msg) => write!(f, "suite: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

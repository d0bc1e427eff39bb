use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of a parse failure, stable across releases so
/// callers and tests can match on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingLineNumber,
    MissingPlaceholder,
    MultiplePlaceholders,
    AnswerNotCandidate,
    CandidateCount,
    MissingSection,
    AnswerNotEntity,
    BadEntityMapping,
    MalformedLine,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::MissingLineNumber => "missing line number",
            ParseErrorKind::MissingPlaceholder => "missing placeholder",
            ParseErrorKind::MultiplePlaceholders => "multiple placeholders",
            ParseErrorKind::AnswerNotCandidate => "answer not among candidates",
            ParseErrorKind::CandidateCount => "wrong candidate count",
            ParseErrorKind::MissingSection => "missing section",
            ParseErrorKind::AnswerNotEntity => "answer is not an entity token",
            ParseErrorKind::BadEntityMapping => "bad entity mapping line",
            ParseErrorKind::MalformedLine => "malformed line",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("degenerate input to {op}: {msg}")]
    Degenerate { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("sequence too short for {op}: length {len} < filter width {width}")]
    SequenceTooShort { op: &'static str, len: usize, width: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },
    #[error("malformed question: {0}")]
    MalformedQuestion(String),
    #[error("{kind} at line {line}: {msg}")]
    Parse {
        kind: ParseErrorKind,
        line: usize,
        msg: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),
    #[error("checkpoint error in field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn degenerate(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Degenerate { op, msg: msg.into() }
    }

    pub(crate) fn parse(kind: ParseErrorKind, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            kind,
            line,
            msg: msg.into(),
        }
    }

    pub fn parse_kind(&self) -> Option<ParseErrorKind> {
        match self {
            Error::Parse { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::Vocabulary { .. }
            | Error::MalformedQuestion(_)
            | Error::Checkpoint { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Dimension { .. }
            | Error::Degenerate { .. }
            | Error::NonFinite { .. }
            | Error::SequenceTooShort { .. }
            | Error::OracleInvalid(_)
            | Error::Invariant(_) => 3,
        }
    }
}

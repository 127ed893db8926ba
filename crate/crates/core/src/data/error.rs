use std::path::PathBuf;

use thiserror::Error;

use super::LabelKind;

/// What is wrong with a single row of a matrix.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowProblem {
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("non-numeric token {0:?}")]
    NonNumeric(String),
    #[error("non-finite value {0:?}")]
    NonFinite(String),
    #[error("label entry {0:?} is not 0 or 1")]
    NotBinary(String),
    #[error("{kind} row must have exactly one positive, found {positives}")]
    KindViolation { kind: LabelKind, positives: usize },
    #[error("full row has no positive label")]
    EmptyRow,
    #[error("value {0:?} outside the open interval (0, 1)")]
    OutOfRange(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("header declares {expected} rows, body has {found}")]
    RowCount { expected: usize, found: usize },
    #[error("line {line}: {problem}")]
    AtLine { line: usize, problem: RowProblem },
    #[error("row {row}: {problem}")]
    AtRow { row: usize, problem: RowProblem },
    #[error("expected label kind {expected}, file declares {found}")]
    KindMismatch { expected: LabelKind, found: LabelKind },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

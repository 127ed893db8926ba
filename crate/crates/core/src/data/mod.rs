//! Feature and label containers, their text formats, annotator-vote
//! aggregation, and the synthetic data generator.

mod error;
pub mod format;
mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

pub use error::{DataError, RowProblem};
use format::{
    header_line, parse_count, parse_header, push_row, read_file, split_body, split_row, write_file,
    FEATURES,
};
pub use synth::{synth_generate, SynthConfig, SynthData};

use crate::Scalar;

/// An `n x d` matrix of finite instance features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Array2<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self, DataError> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(DataError::Shape(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(DataError::AtRow {
                    row: i,
                    problem: RowProblem::NonFinite(v.to_string()),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.values.row(i)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.values
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let values = format::parse_real_matrix(text, FEATURES)?;
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(DataError::MalformedHeader {
                line: 1,
                reason: "n and d must be at least 1".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn render(&self) -> String {
        format::render_real_matrix(&self.values, FEATURES)
    }
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<FeatureMatrix<T>, DataError> {
    FeatureMatrix::parse(&read_file(path)?)
}

pub fn write_features<T: Scalar>(m: &FeatureMatrix<T>, path: &Path) -> Result<(), DataError> {
    write_file(path, &m.render())
}

/// Which row constraint a label matrix satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    /// Exactly one positive per row (single-positive training labels).
    Partial,
    /// At least one positive per row (aggregated ground truth).
    Full,
    /// Any number of positives (algorithmic pseudo-labels).
    Pseudo,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Partial => "partial",
            LabelKind::Full => "full",
            LabelKind::Pseudo => "pseudo",
        })
    }
}

impl FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "partial" => Ok(LabelKind::Partial),
            "full" => Ok(LabelKind::Full),
            "pseudo" => Ok(LabelKind::Pseudo),
            other => Err(format!("unknown label kind {other:?}")),
        }
    }
}

fn check_label_row(kind: LabelKind, row: ArrayView1<'_, u8>) -> Result<(), RowProblem> {
    if let Some(v) = row.iter().find(|&&v| v > 1) {
        return Err(RowProblem::NotBinary(v.to_string()));
    }
    let positives = row.iter().filter(|&&v| v == 1).count();
    match kind {
        LabelKind::Partial if positives != 1 => Err(RowProblem::KindViolation { kind, positives }),
        LabelKind::Full if positives == 0 => Err(RowProblem::EmptyRow),
        _ => Ok(()),
    }
}

/// An `n x C` binary label matrix tagged with its [`LabelKind`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    kind: LabelKind,
    values: Array2<u8>,
}

impl LabelMatrix {
    pub fn new(values: Array2<u8>, kind: LabelKind) -> Result<Self, DataError> {
        let (n, c) = values.dim();
        if n == 0 || c == 0 {
            return Err(DataError::Shape(format!(
                "label matrix must be non-empty, got {n}x{c}"
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            check_label_row(kind, row).map_err(|problem| DataError::AtRow { row: i, problem })?;
        }
        Ok(Self { kind, values })
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, u8> {
        self.values.view()
    }

    pub fn get(&self, i: usize, c: usize) -> bool {
        self.values[[i, c]] == 1
    }

    /// Re-validates the same entries under another kind.
    pub fn with_kind(self, kind: LabelKind) -> Result<Self, DataError> {
        Self::new(self.values, kind)
    }

    /// The class of the single positive in row `i`, for partial matrices.
    pub fn observed_class(&self, i: usize) -> Option<usize> {
        match self.kind {
            LabelKind::Partial => self.values.row(i).iter().position(|&v| v == 1),
            _ => None,
        }
    }

    /// Positive count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        self.values
            .columns()
            .into_iter()
            .map(|col| col.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    pub fn to_real<T: Scalar>(&self) -> Array2<T> {
        self.values.mapv(|v| if v == 1 { T::one() } else { T::zero() })
    }

    pub fn parse(text: &str, expected: LabelKind) -> Result<Self, DataError> {
        let first = text.split('\n').next().unwrap_or("");
        let fields = parse_header(first, "lepl-labels", &["n", "c", "kind"])?;
        let n = parse_count(fields[0], "n")?;
        let c = parse_count(fields[1], "c")?;
        let kind: LabelKind = fields[2].parse().map_err(|reason| DataError::MalformedHeader {
            line: 1,
            reason,
        })?;
        if n == 0 || c == 0 {
            return Err(DataError::MalformedHeader {
                line: 1,
                reason: "n and c must be at least 1".into(),
            });
        }
        let (_, body) = split_body(text, n)?;
        let mut values = Array2::zeros((n, c));
        for (i, (line, row)) in body.into_iter().enumerate() {
            for (j, tok) in split_row(line, row, c)?.into_iter().enumerate() {
                values[[i, j]] = match tok {
                    "0" => 0,
                    "1" => 1,
                    _ => {
                        return Err(DataError::AtLine {
                            line,
                            problem: RowProblem::NotBinary(tok.to_string()),
                        })
                    }
                };
            }
            check_label_row(kind, values.row(i))
                .map_err(|problem| DataError::AtLine { line, problem })?;
        }
        if kind != expected {
            // Rows are re-checked under the kind the caller asked for, so a
            // partial-shaped file can still be rejected as a kind violation.
            for (i, row) in values.rows().into_iter().enumerate() {
                check_label_row(expected, row).map_err(|problem| DataError::AtLine {
                    line: i + 2,
                    problem,
                })?;
            }
            return Err(DataError::KindMismatch {
                expected,
                found: kind,
            });
        }
        Ok(Self { kind, values })
    }

    pub fn render(&self) -> String {
        let mut s = header_line(
            "lepl-labels",
            &[
                ("n", self.n().to_string()),
                ("c", self.classes().to_string()),
                ("kind", self.kind.to_string()),
            ],
        );
        s.push('\n');
        for row in self.values.rows() {
            push_row(&mut s, row.iter());
        }
        s
    }
}

pub fn load_labels(path: &Path, expected_kind: LabelKind) -> Result<LabelMatrix, DataError> {
    LabelMatrix::parse(&read_file(path)?, expected_kind)
}

pub fn write_labels(m: &LabelMatrix, path: &Path) -> Result<(), DataError> {
    write_file(path, &m.render())
}

/// Votes of `A` annotators over `C` classes for `n` instances (`n x A x C`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTensor {
    votes: Array3<u8>,
}

impl AnnotationTensor {
    pub fn new(votes: Array3<u8>) -> Result<Self, DataError> {
        let (n, a, c) = votes.dim();
        if n == 0 || a == 0 || c == 0 {
            return Err(DataError::Shape(format!(
                "annotation tensor must be non-empty, got {n}x{a}x{c}"
            )));
        }
        if let Some(v) = votes.iter().find(|&&v| v > 1) {
            return Err(DataError::Shape(format!("vote entry {v} is not 0 or 1")));
        }
        Ok(Self { votes })
    }

    pub fn n(&self) -> usize {
        self.votes.dim().0
    }

    pub fn annotators(&self) -> usize {
        self.votes.dim().1
    }

    pub fn classes(&self) -> usize {
        self.votes.dim().2
    }

    pub fn votes(&self) -> &Array3<u8> {
        &self.votes
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let first = text.split('\n').next().unwrap_or("");
        let fields = parse_header(first, "lepl-votes", &["n", "c", "a"])?;
        let n = parse_count(fields[0], "n")?;
        let c = parse_count(fields[1], "c")?;
        let a = parse_count(fields[2], "a")?;
        if n == 0 || c == 0 || a == 0 {
            return Err(DataError::MalformedHeader {
                line: 1,
                reason: "n, c and a must be at least 1".into(),
            });
        }
        let (_, body) = split_body(text, n * a)?;
        let mut votes = Array3::zeros((n, a, c));
        for (r, (line, row)) in body.into_iter().enumerate() {
            for (j, tok) in split_row(line, row, c)?.into_iter().enumerate() {
                votes[[r / a, r % a, j]] = match tok {
                    "0" => 0,
                    "1" => 1,
                    _ => {
                        return Err(DataError::AtLine {
                            line,
                            problem: RowProblem::NotBinary(tok.to_string()),
                        })
                    }
                };
            }
        }
        Ok(Self { votes })
    }

    pub fn render(&self) -> String {
        let (n, a, c) = self.votes.dim();
        let mut s = header_line(
            "lepl-votes",
            &[("n", n.to_string()), ("c", c.to_string()), ("a", a.to_string())],
        );
        s.push('\n');
        for i in 0..n {
            for k in 0..a {
                push_row(&mut s, (0..c).map(|j| self.votes[[i, k, j]]));
            }
        }
        s
    }
}

pub fn load_votes(path: &Path) -> Result<AnnotationTensor, DataError> {
    AnnotationTensor::parse(&read_file(path)?)
}

pub fn write_votes(t: &AnnotationTensor, path: &Path) -> Result<(), DataError> {
    write_file(path, &t.render())
}

/// Strict-majority aggregation: class `c` is kept when more than half of
/// the annotators chose it. Rows left empty fall back to the last class,
/// which plays the role of "None".
pub fn majority_vote(annotations: &AnnotationTensor) -> LabelMatrix {
    let (n, a, c) = annotations.votes.dim();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            let count = (0..a).filter(|&k| annotations.votes[[i, k, j]] == 1).count();
            if 2 * count > a {
                out[[i, j]] = 1;
            }
        }
        if out.row(i).iter().all(|&v| v == 0) {
            out[[i, c - 1]] = 1;
        }
    }
    LabelMatrix {
        kind: LabelKind::Full,
        values: out,
    }
}

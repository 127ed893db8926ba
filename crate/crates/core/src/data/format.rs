//! Line-oriented text formats.
//!
//! Every file is a single `#<magic> v1 key=value ...` header line followed by
//! one whitespace-separated row per line. Reals are written with `Display`,
//! which yields the shortest decimal that reads back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::error::{DataError, RowProblem};
use crate::Scalar;

pub(crate) fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

/// Parses `#<magic> v1 k1=.. k2=..` and returns the values of `keys`, in order.
pub(crate) fn parse_header<'a>(
    line: &'a str,
    magic: &str,
    keys: &[&str],
) -> Result<Vec<&'a str>, DataError> {
    let bad = |reason: String| DataError::MalformedHeader { line: 1, reason };
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| bad("missing leading '#'".into()))?;
    let mut tokens = rest.split(' ');
    match tokens.next() {
        Some(m) if m == magic => {}
        other => {
            return Err(bad(format!(
                "expected magic {magic:?}, found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    if tokens.next() != Some("v1") {
        return Err(bad("unsupported or missing version (want v1)".into()));
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let tok = tokens
            .next()
            .ok_or_else(|| bad(format!("missing field {key}")))?;
        let value = tok
            .strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected {key}=<value>, found {tok:?}")))?;
        values.push(value);
    }
    if let Some(extra) = tokens.next() {
        return Err(bad(format!("unexpected trailing field {extra:?}")));
    }
    Ok(values)
}

pub(crate) fn parse_count(value: &str, key: &str) -> Result<usize, DataError> {
    value.parse().map_err(|_| DataError::MalformedHeader {
        line: 1,
        reason: format!("{key}={value:?} is not a non-negative integer"),
    })
}

pub(crate) fn header_line(magic: &str, fields: &[(&str, String)]) -> String {
    let mut s = format!("#{magic} v1");
    for (k, v) in fields {
        let _ = write!(s, " {k}={v}");
    }
    s
}

/// Splits text into its header and exactly `rows` body lines (1-based line
/// numbers attached). Blank lines may only trail the body.
pub(crate) fn split_body(text: &str, rows: usize) -> Result<(&str, Vec<(usize, &str)>), DataError> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let mut body = Vec::with_capacity(rows);
    let mut trailing_blank = false;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.is_empty() {
            trailing_blank = true;
            continue;
        }
        if trailing_blank {
            return Err(DataError::AtLine {
                line: lineno - 1,
                problem: RowProblem::ColumnCount { expected: 1, found: 0 },
            });
        }
        body.push((lineno, line));
    }
    if body.len() != rows {
        return Err(DataError::RowCount {
            expected: rows,
            found: body.len(),
        });
    }
    Ok((header, body))
}

pub(crate) fn split_row(line: usize, text: &str, cols: usize) -> Result<Vec<&str>, DataError> {
    let tokens: Vec<&str> = text.split(' ').collect();
    if tokens.len() != cols {
        return Err(DataError::AtLine {
            line,
            problem: RowProblem::ColumnCount {
                expected: cols,
                found: tokens.len(),
            },
        });
    }
    Ok(tokens)
}

pub(crate) fn parse_real<T: Scalar>(line: usize, token: &str) -> Result<T, DataError> {
    let v: T = token.parse().map_err(|_| DataError::AtLine {
        line,
        problem: RowProblem::NonNumeric(token.to_string()),
    })?;
    if !v.is_finite() {
        return Err(DataError::AtLine {
            line,
            problem: RowProblem::NonFinite(token.to_string()),
        });
    }
    Ok(v)
}

/// Header keys for a real-valued matrix file: magic plus the row and column key.
#[derive(Debug, Clone, Copy)]
pub struct RealFormat {
    pub magic: &'static str,
    pub row_key: &'static str,
    pub col_key: &'static str,
}

pub const FEATURES: RealFormat = RealFormat {
    magic: "lepl-features",
    row_key: "n",
    col_key: "d",
};
pub const SOFT_LABELS: RealFormat = RealFormat {
    magic: "lepl-softlabels",
    row_key: "n",
    col_key: "c",
};
pub const PREDICTIONS: RealFormat = RealFormat {
    magic: "lepl-predictions",
    row_key: "n",
    col_key: "c",
};
pub const EMBEDDINGS: RealFormat = RealFormat {
    magic: "lepl-embeddings",
    row_key: "c",
    col_key: "d",
};

pub fn parse_real_matrix<T: Scalar>(text: &str, fmt: RealFormat) -> Result<Array2<T>, DataError> {
    let first = text.split('\n').next().unwrap_or("");
    let fields = parse_header(first, fmt.magic, &[fmt.row_key, fmt.col_key])?;
    let rows = parse_count(fields[0], fmt.row_key)?;
    let cols = parse_count(fields[1], fmt.col_key)?;
    let (_, body) = split_body(text, rows)?;
    let mut out = Array2::zeros((rows, cols));
    for (i, (line, row)) in body.into_iter().enumerate() {
        for (j, tok) in split_row(line, row, cols)?.into_iter().enumerate() {
            out[[i, j]] = parse_real(line, tok)?;
        }
    }
    Ok(out)
}

pub fn render_real_matrix<T: Scalar>(values: &Array2<T>, fmt: RealFormat) -> String {
    let (rows, cols) = values.dim();
    let mut s = header_line(
        fmt.magic,
        &[(fmt.row_key, rows.to_string()), (fmt.col_key, cols.to_string())],
    );
    s.push('\n');
    for row in values.rows() {
        push_row(&mut s, row.iter());
    }
    s
}

pub(crate) fn push_row<I: Iterator<Item = D>, D: std::fmt::Display>(s: &mut String, items: I) {
    for (j, v) in items.enumerate() {
        if j > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

pub fn load_real_matrix<T: Scalar>(path: &Path, fmt: RealFormat) -> Result<Array2<T>, DataError> {
    parse_real_matrix(&read_file(path)?, fmt)
}

pub fn write_real_matrix<T: Scalar>(
    values: &Array2<T>,
    path: &Path,
    fmt: RealFormat,
) -> Result<(), DataError> {
    write_file(path, &render_real_matrix(values, fmt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_fields_in_order() {
        let v = parse_header("#lepl-features v1 n=2 d=3", "lepl-features", &["n", "d"]).unwrap();
        assert_eq!(v, vec!["2", "3"]);
    }

    #[test]
    fn header_rejects_wrong_magic_and_version() {
        assert!(parse_header("#lepl-labels v1 n=2 d=3", "lepl-features", &["n", "d"]).is_err());
        assert!(parse_header("#lepl-features v2 n=2 d=3", "lepl-features", &["n", "d"]).is_err());
        assert!(parse_header("lepl-features v1 n=2 d=3", "lepl-features", &["n", "d"]).is_err());
        assert!(parse_header("#lepl-features v1 d=3 n=2", "lepl-features", &["n", "d"]).is_err());
        assert!(parse_header("#lepl-features v1 n=2 d=3 x=1", "lepl-features", &["n", "d"]).is_err());
    }

    #[test]
    fn body_blank_line_in_middle_is_rejected() {
        let text = "#h v1\n1\n\n2\n";
        assert!(split_body(text, 2).is_err());
        assert!(split_body("#h v1\n1\n2\n\n", 2).is_ok());
    }

    #[test]
    fn shortest_round_trip_text() {
        let values = ndarray::array![[0.1f64, 1.0 / 3.0], [-0.0, 1e-300]];
        let text = render_real_matrix(&values, SOFT_LABELS);
        assert!(text.starts_with("#lepl-softlabels v1 n=2 c=2\n0.1 "));
        let back: Array2<f64> = parse_real_matrix(&text, SOFT_LABELS).unwrap();
        for (a, b) in values.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

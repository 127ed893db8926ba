//! Multi-label evaluation metrics.
//!
//! Ranks are 1-based over descending scores; equal scores are ordered by
//! ascending index, both across classes (per instance) and across instances
//! (per class). Instances a metric cannot score (no positives, or no
//! negatives for the ranking loss) are left out of that metric's average.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::format::{read_file, write_file};
use crate::data::DataError;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("shape mismatch: predictions {pred:?} vs labels {truth:?}")]
    Shape { pred: (usize, usize), truth: (usize, usize) },
    #[error("ground truth has no positive label anywhere")]
    NoPositives,
    #[error("{0}: no instance qualifies for averaging")]
    NothingToAverage(&'static str),
}

fn check_shape<T>(scores: &ArrayView2<'_, T>, truth: &ArrayView2<'_, u8>) -> Result<(), MetricError> {
    if scores.dim() != truth.dim() {
        return Err(MetricError::Shape { pred: scores.dim(), truth: truth.dim() });
    }
    Ok(())
}

/// Descending by score, ascending by index on ties.
fn rank_order<T: Scalar>(a: (usize, T), b: (usize, T)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn sorted_indices<T: Scalar>(scores: ArrayView1<'_, T>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank_order((a, scores[a]), (b, scores[b])));
    idx
}

/// 1-based rank of `label` within `scores`.
pub fn rank_of<T: Scalar>(scores: ArrayView1<'_, T>, label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(k, &v)| v > s || (v == s && k < label))
        .count()
}

/// Macro average over classes of per-class average precision; classes
/// without positives are skipped.
pub fn mean_average_precision<T: Scalar>(
    scores: ArrayView2<'_, T>,
    truth: ArrayView2<'_, u8>,
) -> Result<T, MetricError> {
    check_shape(&scores, &truth)?;
    let mut total = T::zero();
    let mut classes = 0usize;
    for (col, labels) in scores.columns().into_iter().zip(truth.columns()) {
        let positives = labels.iter().filter(|&&v| v == 1).count();
        if positives == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut sum = T::zero();
        for (pos, i) in sorted_indices(col).into_iter().enumerate() {
            if labels[i] == 1 {
                hits += 1;
                sum = sum + T::from_count(hits) / T::from_count(pos + 1);
            }
        }
        total = total + sum / T::from_count(positives);
        classes += 1;
    }
    if classes == 0 {
        return Err(MetricError::NoPositives);
    }
    Ok(total / T::from_count(classes))
}

/// Fraction of (positive, negative) pairs with the positive not scored
/// strictly above the negative.
pub fn label_ranking_loss<T: Scalar>(
    scores: ArrayView2<'_, T>,
    truth: ArrayView2<'_, u8>,
) -> Result<T, MetricError> {
    check_shape(&scores, &truth)?;
    let mut total = T::zero();
    let mut counted = 0usize;
    for (row, labels) in scores.rows().into_iter().zip(truth.rows()) {
        let mut neg: Vec<T> = row.iter().zip(labels.iter()).filter(|(_, &y)| y == 0).map(|(&s, _)| s).collect();
        let n_pos = labels.len() - neg.len();
        if n_pos == 0 || neg.is_empty() {
            continue;
        }
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let violations: usize = row
            .iter()
            .zip(labels.iter())
            .filter(|(_, &y)| y == 1)
            .map(|(&s, _)| neg.len() - neg.partition_point(|&v| v < s))
            .sum();
        total = total + T::from_count(violations) / T::from_count(n_pos * neg.len());
        counted += 1;
    }
    if counted == 0 {
        return Err(MetricError::NothingToAverage("label ranking loss"));
    }
    Ok(total / T::from_count(counted))
}

/// Mean over instances of the worst rank held by a true label.
pub fn coverage_error<T: Scalar>(scores: ArrayView2<'_, T>, truth: ArrayView2<'_, u8>) -> Result<T, MetricError> {
    check_shape(&scores, &truth)?;
    let mut total = 0usize;
    let mut counted = 0usize;
    for (row, labels) in scores.rows().into_iter().zip(truth.rows()) {
        let order = sorted_indices(row);
        if let Some(last) = order.iter().rposition(|&k| labels[k] == 1) {
            total += last + 1;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(MetricError::NothingToAverage("coverage error"));
    }
    Ok(T::from_count(total) / T::from_count(counted))
}

/// Fraction of instances whose top-scored label is not a true label.
pub fn one_error<T: Scalar>(scores: ArrayView2<'_, T>, truth: ArrayView2<'_, u8>) -> Result<T, MetricError> {
    check_shape(&scores, &truth)?;
    let mut misses = 0usize;
    let mut counted = 0usize;
    for (row, labels) in scores.rows().into_iter().zip(truth.rows()) {
        if labels.iter().all(|&y| y == 0) {
            continue;
        }
        let top = (0..row.len())
            .min_by(|&a, &b| rank_order((a, row[a]), (b, row[b])))
            .expect("at least one class");
        if labels[top] == 0 {
            misses += 1;
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(MetricError::NothingToAverage("one-error"));
    }
    Ok(T::from_count(misses) / T::from_count(counted))
}

/// Thresholds probabilities at 0.5; exactly 0.5 maps to 1.
pub fn binarize<T: Scalar>(probabilities: ArrayView2<'_, T>) -> Array2<u8> {
    let half = T::lit(0.5);
    probabilities.mapv(|p| u8::from(p >= half))
}

/// Mean entrywise disagreement between two binary matrices.
pub fn hamming_risk<T: Scalar>(pred: ArrayView2<'_, u8>, truth: ArrayView2<'_, u8>) -> Result<T, MetricError> {
    check_shape(&pred, &truth)?;
    let wrong = pred.iter().zip(truth.iter()).filter(|(a, b)| a != b).count();
    Ok(T::from_count(wrong) / T::from_count(pred.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub lrl: f64,
    pub coverage_error: f64,
    pub one_error: f64,
    pub hamming_risk: f64,
}

/// All five metrics for probability-valued predictions.
pub fn evaluate<T: Scalar>(
    probabilities: ArrayView2<'_, T>,
    truth: ArrayView2<'_, u8>,
) -> Result<MetricsReport, MetricError> {
    let f = |v: T| v.to_f64().expect("finite metric");
    Ok(MetricsReport {
        map: f(mean_average_precision(probabilities, truth)?),
        lrl: f(label_ranking_loss(probabilities, truth)?),
        coverage_error: f(coverage_error(probabilities, truth)?),
        one_error: f(one_error(probabilities, truth)?),
        hamming_risk: f(hamming_risk(binarize(probabilities).view(), truth)?),
    })
}

impl MetricsReport {
    const KEYS: [&'static str; 5] = ["map", "lrl", "coverage_error", "one_error", "hamming_risk"];

    fn fields(&self) -> [f64; 5] {
        [self.map, self.lrl, self.coverage_error, self.one_error, self.hamming_risk]
    }

    /// Flat `key = value` text, one metric per line.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.fields()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, DataError> {
        let mut vals = [None; 5];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || DataError::MalformedHeader { line: lineno + 1, reason: format!("bad report line {line:?}") };
            let (k, v) = line.split_once('=').ok_or_else(bad)?;
            let slot = Self::KEYS.iter().position(|&key| key == k.trim()).ok_or_else(bad)?;
            vals[slot] = Some(v.trim().parse::<f64>().map_err(|_| bad())?);
        }
        let get = |i: usize| {
            vals[i].ok_or_else(|| DataError::Config(format!("report is missing {}", Self::KEYS[i])))
        };
        Ok(Self {
            map: get(0)?,
            lrl: get(1)?,
            coverage_error: get(2)?,
            one_error: get(3)?,
            hamming_risk: get(4)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn write_text(&self, path: &Path) -> Result<(), DataError> {
        write_file(path, &self.render_text())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), DataError> {
        write_file(path, &(self.to_json() + "\n"))
    }

    pub fn load_json(path: &Path) -> Result<Self, DataError> {
        serde_json::from_str(&read_file(path)?).map_err(|e| DataError::Config(format!("{}: {e}", path.display())))
    }
}

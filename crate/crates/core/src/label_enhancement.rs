//! Contrastive label enhancement.
//!
//! Each instance's soft label row is pulled toward the rows of its top-K
//! feature-space neighbours and pushed away from every other row, using a
//! temperature-scaled softmax over cosine similarities. The soft labels are
//! stored as logits so that plain gradient descent keeps them in `[0, 1]`.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{FeatureMatrix, LabelKind, LabelMatrix};
use crate::scalar::{logit, sigmoid, softplus};
use crate::Scalar;

/// Logit used for clamped (observed) entries. Its sigmoid rounds to 1 in
/// both `f32` and `f64`; the stored value is set to exactly 1 regardless.
const CLAMP_LOGIT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnhanceError {
    #[error("need at least 2 instances, got {0}")]
    TooFewInstances(usize),
    #[error("feature row {row} has zero norm; cosine similarity is undefined")]
    ZeroNormFeature { row: usize },
    #[error("soft label row {row} has zero norm; cosine similarity is undefined")]
    ZeroNormSoftRow { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Top-K cosine neighbours of every instance, most similar first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborIndex {
    /// Builds an index from explicit lists, checking the structural invariants.
    pub fn from_lists(k: usize, neighbors: Vec<Vec<usize>>) -> Result<Self, EnhanceError> {
        if k == 0 {
            return Err(EnhanceError::Config("K must be at least 1".into()));
        }
        let n = neighbors.len();
        let want = k.min(n.saturating_sub(1));
        for (i, list) in neighbors.iter().enumerate() {
            let mut seen = vec![false; n];
            if list.len() != want {
                return Err(EnhanceError::Shape(format!(
                    "instance {i} has {} neighbours, expected {want}",
                    list.len()
                )));
            }
            for &j in list {
                if j >= n || j == i || seen[j] {
                    return Err(EnhanceError::Shape(format!(
                        "instance {i} has invalid neighbour {j}"
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(Self { k, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }
}

fn row_norms<T: Scalar>(m: ArrayView2<'_, T>) -> Array1<T> {
    m.map_axis(Axis(1), |row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
}

/// Rows scaled to unit length; errors name the first zero-norm row.
fn unit_rows<T: Scalar>(
    m: ArrayView2<'_, T>,
    on_zero: impl Fn(usize) -> EnhanceError,
) -> Result<(Array2<T>, Array1<T>), EnhanceError> {
    let norms = row_norms(m);
    if let Some(row) = norms.iter().position(|&r| r == T::zero()) {
        return Err(on_zero(row));
    }
    let unit = &m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// For every instance, the `min(K, n-1)` other instances with the largest
/// cosine similarity, ties broken by ascending index.
pub fn build_knn<T: Scalar>(x: &FeatureMatrix<T>, k: usize) -> Result<NeighborIndex, EnhanceError> {
    let n = x.n();
    if n < 2 {
        return Err(EnhanceError::TooFewInstances(n));
    }
    if k == 0 {
        return Err(EnhanceError::Config("K must be at least 1".into()));
    }
    let (unit, _) = unit_rows(x.values(), |row| EnhanceError::ZeroNormFeature { row })?;
    let sims = unit.dot(&unit.t());
    let take = k.min(n - 1);
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = sims.row(i);
            let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite").then(a.cmp(&b)));
            cand.truncate(take);
            cand
        })
        .collect();
    Ok(NeighborIndex { k, neighbors })
}

/// Soft label distribution `D = sigmoid(logits)` with observed positives
/// pinned to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix<T> {
    logits: Array2<T>,
    values: Array2<T>,
    clamped: Array2<bool>,
}

impl<T: Scalar> SoftLabelMatrix<T> {
    pub fn from_logits(logits: Array2<T>, clamped: Array2<bool>) -> Result<Self, EnhanceError> {
        if logits.dim() != clamped.dim() {
            return Err(EnhanceError::Shape(format!(
                "logits {:?} vs mask {:?}",
                logits.dim(),
                clamped.dim()
            )));
        }
        let mut s = Self {
            values: Array2::zeros(logits.dim()),
            logits,
            clamped,
        };
        s.refresh_values();
        Ok(s)
    }

    fn refresh_values(&mut self) {
        let pinned = T::lit(CLAMP_LOGIT);
        Zip::from(&mut self.values)
            .and(&mut self.logits)
            .and(&self.clamped)
            .for_each(|v, z, &c| {
                if c {
                    *z = pinned;
                    *v = T::one();
                } else {
                    *v = sigmoid(*z);
                }
            });
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn logits(&self) -> ArrayView2<'_, T> {
        self.logits.view()
    }

    pub fn clamped_mask(&self) -> ArrayView2<'_, bool> {
        self.clamped.view()
    }

    /// Applies `logits -= step` on unclamped entries.
    pub fn descend(&mut self, step: &Array2<T>) {
        Zip::from(&mut self.logits)
            .and(step)
            .and(&self.clamped)
            .for_each(|z, &s, &c| {
                if !c {
                    *z = *z - s;
                }
            });
        self.refresh_values();
    }
}

/// Observed positives clamped to 1, everything else set to `init_bg`.
pub fn init_soft_labels<T: Scalar>(
    partial: &LabelMatrix,
    init_bg: T,
) -> Result<SoftLabelMatrix<T>, EnhanceError> {
    if !(init_bg > T::zero() && init_bg < T::one()) {
        return Err(EnhanceError::Config(format!(
            "init_bg must lie in (0, 1), got {init_bg}"
        )));
    }
    if partial.kind() != LabelKind::Partial {
        return Err(EnhanceError::Config(format!(
            "expected partial labels, got {}",
            partial.kind()
        )));
    }
    let clamped = partial.values().mapv(|v| v == 1);
    let bg = logit(init_bg);
    let logits = Array2::from_elem(clamped.dim(), bg);
    SoftLabelMatrix::from_logits(logits, clamped)
}

fn check_pair<T: Scalar>(d: &SoftLabelMatrix<T>, nbr: &NeighborIndex, tau: T) -> Result<(), EnhanceError> {
    if d.n() < 2 {
        return Err(EnhanceError::TooFewInstances(d.n()));
    }
    if nbr.n() != d.n() {
        return Err(EnhanceError::Shape(format!(
            "neighbour index covers {} instances, soft labels {}",
            nbr.n(),
            d.n()
        )));
    }
    if !(tau > T::zero()) {
        return Err(EnhanceError::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Per-instance loss terms; when `dsim` is given it receives `dL/dsim`
/// (row `i` holds the derivative of term `i`, scaled by `1/(tau n)`).
fn pairwise<T: Scalar>(
    sims: &Array2<T>,
    nbr: &NeighborIndex,
    tau: T,
    dsim: Option<&mut Array2<T>>,
) -> Vec<T> {
    let n = sims.nrows();
    let scale = T::one() / (tau * T::from_count(n));
    let inv_tau = T::one() / tau;
    let compute = |i: usize, out: &mut [T]| -> T {
        let row = sims.row(i);
        let row = row.as_slice().expect("similarities are contiguous");
        let pos = nbr.neighbors(i);
        // Self-similarity is the row maximum, so it is a safe shift for the
        // negatives; the positives get their own.
        let m = row[i] * inv_tau;
        for (o, &s) in out.iter_mut().zip(row) {
            *o = (s * inv_tau - m).exp();
        }
        out[i] = T::zero();
        let m_pos = pos.iter().map(|&j| row[j] * inv_tau).fold(T::neg_infinity(), T::max);
        let mut s_pos = T::zero();
        for &j in pos {
            s_pos = s_pos + (row[j] * inv_tau - m_pos).exp();
            out[j] = T::zero();
        }
        if pos.len() + 1 == n {
            // Every other instance is a neighbour: numerator equals denominator.
            out.fill(T::zero());
            return T::zero();
        }
        let s_neg = out.iter().fold(T::zero(), |a, &e| a + e);
        let lse_pos = m_pos + s_pos.ln();
        let term = softplus(m + s_neg.ln() - lse_pos);
        let lse_all = lse_pos + term;
        let f_neg = (m - lse_all).exp() * scale;
        for o in out.iter_mut() {
            *o = *o * f_neg;
        }
        for &j in pos {
            let z = row[j] * inv_tau;
            out[j] = ((z - lse_all).exp() - (z - lse_pos).exp()) * scale;
        }
        term
    };
    match dsim {
        Some(buf) => buf
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(i, mut out)| compute(i, out.as_slice_mut().expect("contiguous buffer")))
            .collect(),
        None => (0..n)
            .into_par_iter()
            .map_init(|| vec![T::zero(); n], |buf, i| compute(i, buf))
            .collect(),
    }
}

/// `a + a^T`, in place.
fn symmetrize<T: Scalar>(a: &mut Array2<T>) {
    const TILE: usize = 64;
    let n = a.nrows();
    for bi in (0..n).step_by(TILE) {
        for bk in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                for k in bk.max(i)..(bk + TILE).min(n) {
                    let s = a[[i, k]] + a[[k, i]];
                    a[[i, k]] = s;
                    a[[k, i]] = s;
                }
            }
        }
    }
}

fn mean_in_order<T: Scalar>(terms: &[T]) -> T {
    let mut acc = T::zero();
    for &t in terms {
        acc = acc + t;
    }
    acc / T::from_count(terms.len())
}

/// Contrastive enhancement loss and, optionally, its gradient with respect
/// to the logits (zero on clamped entries).
pub fn le_loss_and_grad<T: Scalar>(
    d: &SoftLabelMatrix<T>,
    nbr: &NeighborIndex,
    tau: T,
    want_grad: bool,
) -> Result<(T, Option<Array2<T>>), EnhanceError> {
    let mut buf = if want_grad { Some(Array2::zeros((d.n(), d.n()))) } else { None };
    loss_and_grad_into(d, nbr, tau, buf.as_mut())
}

fn loss_and_grad_into<T: Scalar>(
    d: &SoftLabelMatrix<T>,
    nbr: &NeighborIndex,
    tau: T,
    dsim: Option<&mut Array2<T>>,
) -> Result<(T, Option<Array2<T>>), EnhanceError> {
    check_pair(d, nbr, tau)?;
    let (unit, norms) = unit_rows(d.values(), |row| EnhanceError::ZeroNormSoftRow { row })?;
    let sims = unit.dot(&unit.t());
    let Some(dsim) = dsim else {
        let terms = pairwise(&sims, nbr, tau, None);
        return Ok((mean_in_order(&terms), None));
    };
    let terms = pairwise(&sims, nbr, tau, Some(&mut *dsim));
    let loss = mean_in_order(&terms);
    // sim(i, k) is shared by the terms of i and k.
    symmetrize(dsim);
    let dunit = dsim.dot(&unit);
    let mut grad = Array2::zeros(d.values.dim());
    Zip::from(grad.rows_mut())
        .and(dunit.rows())
        .and(unit.rows())
        .and(&norms)
        .and(d.values.rows())
        .and(d.clamped.rows())
        .for_each(|mut g, du, u, &r, v, mask| {
            let radial = du.dot(&u);
            for c in 0..g.len() {
                if mask[c] {
                    continue;
                }
                let dv = (du[c] - radial * u[c]) / r;
                g[c] = dv * v[c] * (T::one() - v[c]);
            }
        });
    Ok((loss, Some(grad)))
}

pub fn le_loss<T: Scalar>(d: &SoftLabelMatrix<T>, nbr: &NeighborIndex, tau: T) -> Result<T, EnhanceError> {
    le_loss_and_grad(d, nbr, tau, false).map(|(l, _)| l)
}

pub fn le_grad<T: Scalar>(
    d: &SoftLabelMatrix<T>,
    nbr: &NeighborIndex,
    tau: T,
) -> Result<Array2<T>, EnhanceError> {
    le_loss_and_grad(d, nbr, tau, true).map(|(_, g)| g.expect("gradient requested"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeConfig {
    pub tau: f64,
    pub k: usize,
    pub steps: usize,
    /// Step size applied to the gradient of the summed (not averaged)
    /// per-instance loss, so its scale does not depend on `n`.
    pub lr: f64,
    /// Background value for unobserved entries; `None` means `1/C`.
    pub init_bg: Option<f64>,
}

impl Default for LeConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            k: 10,
            steps: 200,
            lr: DEFAULT_LE_LR,
            init_bg: None,
        }
    }
}

pub const DEFAULT_LE_LR: f64 = 1.0;

impl LeConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(EnhanceError::Config("tau must be positive".into()));
        }
        if self.k == 0 {
            return Err(EnhanceError::Config("K must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(EnhanceError::Config("lr must be positive".into()));
        }
        if let Some(bg) = self.init_bg {
            if !(bg > 0.0 && bg < 1.0) {
                return Err(EnhanceError::Config("init_bg must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Result of [`enhance_traced`]: the final soft labels and the loss before
/// each step plus the final loss (`steps + 1` entries).
#[derive(Debug, Clone)]
pub struct Enhancement<T> {
    pub soft: SoftLabelMatrix<T>,
    pub losses: Vec<T>,
}

pub fn enhance<T: Scalar>(
    x: &FeatureMatrix<T>,
    partial: &LabelMatrix,
    cfg: &LeConfig,
) -> Result<SoftLabelMatrix<T>, EnhanceError> {
    enhance_traced(x, partial, cfg).map(|e| e.soft)
}

pub fn enhance_traced<T: Scalar>(
    x: &FeatureMatrix<T>,
    partial: &LabelMatrix,
    cfg: &LeConfig,
) -> Result<Enhancement<T>, EnhanceError> {
    cfg.validate()?;
    if x.n() != partial.n() {
        return Err(EnhanceError::Shape(format!(
            "{} feature rows vs {} label rows",
            x.n(),
            partial.n()
        )));
    }
    let c = partial.classes();
    let bg = cfg.init_bg.unwrap_or(1.0 / c as f64);
    let mut soft = init_soft_labels(partial, T::lit(bg))?;
    let nbr = build_knn(x, cfg.k)?;
    let tau = T::lit(cfg.tau);
    let step_scale = T::lit(cfg.lr) * T::from_count(x.n());
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut dsim = Array2::zeros((x.n(), x.n()));
    for step in 0..cfg.steps {
        let (loss, grad) = loss_and_grad_into(&soft, &nbr, tau, Some(&mut dsim))?;
        if let Some(&prev) = losses.last() {
            if loss > prev && cfg.lr <= DEFAULT_LE_LR {
                warn!("label enhancement loss rose at step {step}: {prev} -> {loss}");
            }
        }
        losses.push(loss);
        soft.descend(&grad.expect("gradient requested").mapv(|g| g * step_scale));
    }
    losses.push(le_loss(&soft, &nbr, tau)?);
    Ok(Enhancement { soft, losses })
}

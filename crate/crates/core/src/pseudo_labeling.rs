//! Class-prior-guided pseudo-labels and the empirical unreliability degree.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::data::{DataError, LabelKind, LabelMatrix};
use crate::label_enhancement::SoftLabelMatrix;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PseudoError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty validation set")]
    EmptyValidation,
}

/// Validation class frequencies and the per-class pseudo-positive budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors<T> {
    pub gamma_hat: Vec<T>,
    /// `floor(gamma_hat[c] * n_train)`, computed in integers.
    pub k_per_class: Vec<usize>,
}

impl<T> ClassPriors<T> {
    pub fn classes(&self) -> usize {
        self.k_per_class.len()
    }
}

pub fn estimate_priors<T: Scalar>(val_labels: &LabelMatrix, n_train: usize) -> Result<ClassPriors<T>, PseudoError> {
    let n_val = val_labels.n();
    if n_val == 0 {
        return Err(PseudoError::EmptyValidation);
    }
    let counts = val_labels.class_counts();
    Ok(ClassPriors {
        gamma_hat: counts
            .iter()
            .map(|&c| T::from_count(c) / T::from_count(n_val))
            .collect(),
        k_per_class: counts.iter().map(|&c| c * n_train / n_val).collect(),
    })
}

/// Binary pseudo-labels for the training split; any number of positives per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelMatrix {
    values: Array2<u8>,
}

impl PseudoLabelMatrix {
    pub fn new(values: Array2<u8>) -> Result<Self, DataError> {
        LabelMatrix::new(values, LabelKind::Pseudo).map(Self::from)
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

    pub fn to_real<T: Scalar>(&self) -> Array2<T> {
        self.values.mapv(|v| if v == 1 { T::one() } else { T::zero() })
    }

    pub fn to_label_matrix(&self) -> LabelMatrix {
        LabelMatrix::new(self.values.clone(), LabelKind::Pseudo).expect("binary entries")
    }
}

impl From<LabelMatrix> for PseudoLabelMatrix {
    fn from(m: LabelMatrix) -> Self {
        Self {
            values: m.values().to_owned(),
        }
    }
}

/// Per class: every observed positive, topped up with the highest-scoring
/// unobserved instances until the class holds `K_c` positives. Score ties
/// go to the lower instance index.
pub fn generate<T: Scalar>(
    d: &SoftLabelMatrix<T>,
    priors: &ClassPriors<T>,
    observed: &LabelMatrix,
) -> Result<PseudoLabelMatrix, PseudoError> {
    let (n, c) = (d.n(), d.classes());
    if observed.n() != n || observed.classes() != c || priors.classes() != c {
        return Err(PseudoError::Shape(format!(
            "soft labels {n}x{c}, observed {}x{}, priors for {} classes",
            observed.n(),
            observed.classes(),
            priors.classes()
        )));
    }
    let scores = d.values();
    let mut values = observed.values().to_owned();
    for class in 0..c {
        let col = scores.column(class);
        let already = (0..n).filter(|&i| observed.get(i, class)).count();
        let budget = priors.k_per_class[class].saturating_sub(already);
        if budget == 0 {
            continue;
        }
        let mut cand: Vec<usize> = (0..n).filter(|&i| !observed.get(i, class)).collect();
        cand.sort_by(|&a, &b| col[b].partial_cmp(&col[a]).expect("finite scores").then(a.cmp(&b)));
        for &i in cand.iter().take(budget) {
            values[[i, class]] = 1;
        }
    }
    Ok(PseudoLabelMatrix { values })
}

/// Largest per-class disagreement rate between two binary matrices.
pub fn unreliability<T: Scalar>(pseudo: ArrayView2<'_, u8>, truth: ArrayView2<'_, u8>) -> Result<T, PseudoError> {
    if pseudo.dim() != truth.dim() {
        return Err(PseudoError::Shape(format!(
            "{:?} vs {:?}",
            pseudo.dim(),
            truth.dim()
        )));
    }
    let n = pseudo.nrows();
    let worst = pseudo
        .columns()
        .into_iter()
        .zip(truth.columns())
        .map(|(p, t)| p.iter().zip(t.iter()).filter(|(a, b)| a != b).count())
        .max()
        .unwrap_or(0);
    Ok(T::from_count(worst) / T::from_count(n))
}

/// The single-positive labels read as pseudo-labels: unobserved means negative.
pub fn single_label_pseudo(observed: &LabelMatrix) -> PseudoLabelMatrix {
    PseudoLabelMatrix {
        values: observed.values().to_owned(),
    }
}

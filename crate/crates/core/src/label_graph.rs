//! Label co-occurrence graph and the two-layer GCN that turns label
//! embeddings into per-label linear classifiers.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::format::{self, EMBEDDINGS};
use crate::data::{DataError, LabelMatrix};
use crate::Scalar;

/// Self-loop weight given to labels that never occur in the validation set.
pub const DEAD_LABEL_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("GCN caches are stale; run the forward pass first")]
    StaleCache,
    #[error("graph has not been normalized")]
    NotNormalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoOccurrenceGraph<T> {
    a: Array2<T>,
    a_hat: Option<Array2<T>>,
    degree: Option<Array1<T>>,
}

impl<T: Scalar> CoOccurrenceGraph<T> {
    pub fn from_matrix(a: Array2<T>) -> Result<Self, GraphError> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(GraphError::Shape(format!("adjacency must be square and non-empty, got {:?}", a.dim())));
        }
        Ok(Self { a, a_hat: None, degree: None })
    }

    pub fn classes(&self) -> usize {
        self.a.nrows()
    }

    /// Raw co-occurrence, after dead-label regularization once normalized.
    pub fn a(&self) -> ArrayView2<'_, T> {
        self.a.view()
    }

    pub fn a_hat(&self) -> Option<ArrayView2<'_, T>> {
        self.a_hat.as_ref().map(|m| m.view())
    }

    pub fn degree(&self) -> Option<&Array1<T>> {
        self.degree.as_ref()
    }

    pub fn render_cooc(&self) -> String {
        let c = self.classes();
        let mut s = format::header_line("lepl-cooc", &[("c", c.to_string())]);
        s.push('\n');
        for row in self.a.rows() {
            format::push_row(&mut s, row.iter());
        }
        s
    }

    pub fn write_cooc(&self, path: &Path) -> Result<(), DataError> {
        format::write_file(path, &self.render_cooc())
    }
}

/// `A_ij = (1/n_val) * #{k : y_ki = y_kj = 1}`.
pub fn cooccurrence<T: Scalar>(val_labels: &LabelMatrix) -> CoOccurrenceGraph<T> {
    let y = val_labels.values().mapv(u32::from);
    let counts = y.t().dot(&y);
    let n = T::from_count(val_labels.n());
    let a = counts.mapv(|k| T::from_count(k as usize) / n);
    CoOccurrenceGraph { a, a_hat: None, degree: None }
}

/// Symmetric normalization `Q^{-1/2} A Q^{-1/2}` with `Q_ii = sum_j A_ij`.
/// Labels of zero degree first receive a self-loop of weight
/// [`DEAD_LABEL_DELTA`].
pub fn normalize<T: Scalar>(mut graph: CoOccurrenceGraph<T>) -> CoOccurrenceGraph<T> {
    let c = graph.classes();
    let delta = T::lit(DEAD_LABEL_DELTA);
    for i in 0..c {
        if graph.a.row(i).iter().copied().sum::<T>() == T::zero() {
            graph.a[[i, i]] = delta;
        }
    }
    let q: Array1<T> = graph.a.rows().into_iter().map(|r| r.iter().copied().sum::<T>()).collect();
    let a_hat = Array2::from_shape_fn((c, c), |(i, j)| graph.a[[i, j]] / (q[i] * q[j]).sqrt());
    graph.a_hat = Some(a_hat);
    graph.degree = Some(q);
    graph
}

/// Label embeddings `E`, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddings<T> {
    e: Array2<T>,
}

impl<T: Scalar> LabelEmbeddings<T> {
    pub fn new(e: Array2<T>) -> Result<Self, GraphError> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::Shape("embeddings must be finite".into()));
        }
        Ok(Self { e })
    }

    /// Standard normal entries.
    pub fn random<R: Rng>(classes: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            e: Array2::from_shape_fn((classes, dim), |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z)
            }),
        }
    }

    pub fn classes(&self) -> usize {
        self.e.nrows()
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, T> {
        self.e.view()
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<T> {
        &mut self.e
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let e = format::load_real_matrix(path, EMBEDDINGS)?;
        Ok(Self { e })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        format::write_real_matrix(&self.e, path, EMBEDDINGS)
    }
}

/// GCN weights plus the activations of the last forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters<T> {
    w0: Array2<T>,
    w1: Array2<T>,
    /// `A_hat E`, reused by backward.
    ae: Array2<T>,
    /// Pre-activation `A_hat E W0`.
    z1: Array2<T>,
    h1: Array2<T>,
    w: Array2<T>,
    fresh: bool,
}

impl<T: Scalar> GcnParameters<T> {
    /// Unevaluated parameters; call [`gcn_forward`] before reading `w`.
    pub fn new(w0: Array2<T>, w1: Array2<T>) -> Self {
        Self {
            w0,
            w1,
            ae: Array2::zeros((0, 0)),
            z1: Array2::zeros((0, 0)),
            h1: Array2::zeros((0, 0)),
            w: Array2::zeros((0, 0)),
            fresh: false,
        }
    }

    /// Entries drawn from `N(0, 1/fan_in)`.
    pub fn random<R: Rng>(embed_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Self::new(scaled_normal(embed_dim, hidden, rng), scaled_normal(hidden, out_dim, rng))
    }

    pub fn w0(&self) -> ArrayView2<'_, T> {
        self.w0.view()
    }

    pub fn w1(&self) -> ArrayView2<'_, T> {
        self.w1.view()
    }

    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    pub fn h1(&self) -> Result<ArrayView2<'_, T>, GraphError> {
        self.fresh.then(|| self.h1.view()).ok_or(GraphError::StaleCache)
    }

    /// The generated `C x d` classifier matrix.
    pub fn classifier(&self) -> Result<ArrayView2<'_, T>, GraphError> {
        self.fresh.then(|| self.w.view()).ok_or(GraphError::StaleCache)
    }

    /// Mutable weights; invalidates the cached forward pass.
    pub fn weights_mut(&mut self) -> (&mut Array2<T>, &mut Array2<T>) {
        self.fresh = false;
        (&mut self.w0, &mut self.w1)
    }
}

/// `fan_in x fan_out` matrix with entries from `N(0, 1/fan_in)`.
pub fn scaled_normal<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<T> {
    let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * scale)
    })
}

fn a_hat_of<T: Scalar>(graph: &CoOccurrenceGraph<T>) -> Result<&Array2<T>, GraphError> {
    graph.a_hat.as_ref().ok_or(GraphError::NotNormalized)
}

/// `H1 = ReLU(A_hat E W0)`, `W = A_hat H1 W1`; fills the caches of `params`.
pub fn gcn_forward<T: Scalar>(
    graph: &CoOccurrenceGraph<T>,
    emb: &LabelEmbeddings<T>,
    mut params: GcnParameters<T>,
) -> Result<GcnParameters<T>, GraphError> {
    let a_hat = a_hat_of(graph)?;
    let c = graph.classes();
    if emb.classes() != c {
        return Err(GraphError::Shape(format!("{} embeddings for {c} labels", emb.classes())));
    }
    if params.w0.nrows() != emb.dim() {
        return Err(GraphError::Shape(format!(
            "W0 has {} rows, embeddings have width {}",
            params.w0.nrows(),
            emb.dim()
        )));
    }
    if params.w1.nrows() != params.w0.ncols() {
        return Err(GraphError::Shape(format!(
            "W0 is {:?} but W1 is {:?}",
            params.w0.dim(),
            params.w1.dim()
        )));
    }
    params.ae = a_hat.dot(&emb.e);
    params.z1 = params.ae.dot(&params.w0);
    params.h1 = params.z1.mapv(|v| v.max(T::zero()));
    params.w = a_hat.dot(&params.h1).dot(&params.w1);
    params.fresh = true;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients<T> {
    pub w0: Array2<T>,
    pub w1: Array2<T>,
    pub embeddings: Array2<T>,
}

/// Gradients of a scalar loss whose derivative with respect to the
/// classifier matrix `W` is `upstream`. The ReLU subgradient at 0 is 0.
pub fn gcn_backward<T: Scalar>(
    graph: &CoOccurrenceGraph<T>,
    emb: &LabelEmbeddings<T>,
    params: &GcnParameters<T>,
    upstream: ArrayView2<'_, T>,
) -> Result<GcnGradients<T>, GraphError> {
    if !params.fresh {
        return Err(GraphError::StaleCache);
    }
    let a_hat = a_hat_of(graph)?;
    if emb.dim() != params.w0.nrows() || emb.classes() != graph.classes() {
        return Err(GraphError::Shape(format!(
            "embeddings {:?} do not match W0 {:?}",
            emb.e.dim(),
            params.w0.dim()
        )));
    }
    if upstream.dim() != params.w.dim() {
        return Err(GraphError::Shape(format!(
            "upstream {:?} vs classifier {:?}",
            upstream.dim(),
            params.w.dim()
        )));
    }
    let ah = a_hat.dot(&params.h1);
    let dw1 = ah.t().dot(&upstream);
    let dh = a_hat.t().dot(&upstream).dot(&params.w1.t());
    let mut dz = dh;
    ndarray::Zip::from(&mut dz).and(&params.z1).for_each(|g, &z| {
        if z <= T::zero() {
            *g = T::zero();
        }
    });
    let dw0 = params.ae.t().dot(&dz);
    let de = a_hat.t().dot(&dz).dot(&params.w0.t());
    Ok(GcnGradients { w0: dw0, w1: dw1, embeddings: de })
}

//! Classifier training on pseudo-labels and the end-to-end pipeline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use ndarray::{Array2, ArrayView2, Zip};
use thiserror::Error;

use crate::data::format::{self, PREDICTIONS};
use crate::data::{DataError, FeatureMatrix, LabelKind, LabelMatrix, RowProblem};
use crate::label_enhancement::{enhance, init_soft_labels, EnhanceError, LeConfig, SoftLabelMatrix};
use crate::label_graph::{
    cooccurrence, gcn_backward, gcn_forward, normalize, scaled_normal, CoOccurrenceGraph, GcnParameters,
    GraphError, LabelEmbeddings,
};
use crate::metrics::{evaluate, MetricError, MetricsReport};
use crate::pseudo_labeling::{estimate_priors, generate, single_label_pseudo, PseudoError, PseudoLabelMatrix};
use crate::rng::stage_rng;
use crate::scalar::{sigmoid, softplus};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {0} (non-finite loss)")]
    Diverged(usize),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which of the three pipeline stages are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Contrastive label enhancement.
    pub enhancement: bool,
    /// Class-prior-guided binary pseudo-labels.
    pub prior_pseudo: bool,
    /// GCN classifier generator over the label graph.
    pub gcn: bool,
}

impl Ablation {
    pub const BASE: Ablation = Ablation { enhancement: false, prior_pseudo: false, gcn: false };
    pub const FULL: Ablation = Ablation { enhancement: true, prior_pseudo: true, gcn: true };

    /// Base, +A, +A+B, +A+B+C.
    pub const LADDER: [Ablation; 4] = [
        Ablation::BASE,
        Ablation { enhancement: true, prior_pseudo: false, gcn: false },
        Ablation { enhancement: true, prior_pseudo: true, gcn: false },
        Ablation::FULL,
    ];
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.enhancement, "enhancement"),
            (self.prior_pseudo, "prior_pseudo"),
            (self.gcn, "gcn"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    /// Comma-separated component names, or `none` / `all`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Ablation::BASE;
        match s.trim() {
            "none" | "" => return Ok(out),
            "all" => return Ok(Ablation::FULL),
            _ => {}
        }
        for part in s.split(',') {
            match part.trim() {
                "enhancement" | "A" => out.enhancement = true,
                "prior_pseudo" | "B" => out.prior_pseudo = true,
                "gcn" | "C" => out.gcn = true,
                other => return Err(format!("unknown ablation component {other:?}")),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub freeze_embeddings: bool,
    pub ablation: Ablation,
}

pub const DEFAULT_TRAIN_LR: f64 = 0.5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: DEFAULT_TRAIN_LR, seed: 0, freeze_embeddings: true, ablation: Ablation::FULL }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Shape of the GCN classifier generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnConfig {
    /// Width of the random label embeddings when none are supplied.
    pub embed_dim: usize,
    /// Hidden width. Much wider than the embeddings: with a narrow hidden
    /// layer plain gradient descent through the GCN converges far more
    /// slowly than on a free classifier matrix.
    pub hidden_dim: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self { embed_dim: 16, hidden_dim: 512 }
    }
}

/// Probabilities `sigmoid(X W^T)` together with the logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix<T> {
    logits: Array2<T>,
    values: Array2<T>,
}

impl<T: Scalar> PredictionMatrix<T> {
    /// Probabilities are kept strictly inside `(0, 1)` even where the
    /// logistic function saturates in floating point.
    pub fn from_logits(logits: Array2<T>) -> Self {
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::lit(2.0);
        let values = logits.mapv(|z| sigmoid(z).max(lo).min(hi));
        Self { logits, values }
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

    pub fn render(&self) -> String {
        format::render_real_matrix(&self.values, PREDICTIONS)
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let values: Array2<T> = format::parse_real_matrix(text, PREDICTIONS)?;
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|&&v| !(v > T::zero() && v < T::one())) {
                return Err(DataError::AtLine { line: i + 2, problem: RowProblem::OutOfRange(v.to_string()) });
            }
        }
        let logits = values.mapv(crate::scalar::logit);
        Ok(Self { logits, values })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        format::write_file(path, &self.render())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse(&format::read_file(path)?)
    }
}

/// Per-label linear classifiers, either generated by the GCN or free.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier<T> {
    Gcn {
        graph: CoOccurrenceGraph<T>,
        embeddings: LabelEmbeddings<T>,
        params: GcnParameters<T>,
    },
    Plain {
        w: Array2<T>,
    },
}

impl<T: Scalar> Classifier<T> {
    /// Builds a GCN classifier and runs its forward pass.
    pub fn gcn(
        graph: CoOccurrenceGraph<T>,
        embeddings: LabelEmbeddings<T>,
        params: GcnParameters<T>,
    ) -> Result<Self, TrainError> {
        let params = gcn_forward(&graph, &embeddings, params)?;
        Ok(Classifier::Gcn { graph, embeddings, params })
    }

    /// The `C x d` classifier matrix.
    pub fn weights(&self) -> ArrayView2<'_, T> {
        match self {
            Classifier::Gcn { params, .. } => params.classifier().expect("forward pass kept fresh"),
            Classifier::Plain { w } => w.view(),
        }
    }

    /// Gradient step for `dL/dW = upstream`.
    fn step(&mut self, upstream: ArrayView2<'_, T>, lr: T, freeze_embeddings: bool) -> Result<(), TrainError> {
        match self {
            Classifier::Plain { w } => {
                w.scaled_add(-lr, &upstream);
            }
            Classifier::Gcn { graph, embeddings, params } => {
                let grads = gcn_backward(graph, embeddings, params, upstream)?;
                let (w0, w1) = params.weights_mut();
                w0.scaled_add(-lr, &grads.w0);
                w1.scaled_add(-lr, &grads.w1);
                if !freeze_embeddings {
                    embeddings.matrix_mut().scaled_add(-lr, &grads.embeddings);
                }
                let taken = std::mem::replace(params, GcnParameters::new(Array2::zeros((0, 0)), Array2::zeros((0, 0))));
                *params = gcn_forward(graph, embeddings, taken)?;
            }
        }
        Ok(())
    }
}

fn check_features<T: Scalar>(w: ArrayView2<'_, T>, x: &FeatureMatrix<T>) -> Result<(), TrainError> {
    if w.ncols() != x.d() {
        return Err(TrainError::Shape(format!("classifier expects {} features, got {}", w.ncols(), x.d())));
    }
    Ok(())
}

/// `sigmoid(X W^T)`.
pub fn predict<T: Scalar>(classifier: &Classifier<T>, x: &FeatureMatrix<T>) -> Result<PredictionMatrix<T>, TrainError> {
    let w = classifier.weights();
    check_features(w, x)?;
    Ok(PredictionMatrix::from_logits(x.values().dot(&w.t())))
}

fn bce_from_logits<T: Scalar>(logits: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> T {
    let n = T::from_count(logits.nrows());
    let mut total = T::zero();
    for (zr, yr) in logits.rows().into_iter().zip(targets.rows()) {
        for (&z, &y) in zr.iter().zip(yr.iter()) {
            // -y ln s(z) - (1-y) ln(1 - s(z)) = softplus(z) - y z
            total = total + softplus(z) - y * z;
        }
    }
    total / n
}

fn check_targets<T: Scalar>(pred: &PredictionMatrix<T>, targets: ArrayView2<'_, T>) -> Result<(), TrainError> {
    if pred.logits.dim() != targets.dim() {
        return Err(TrainError::Shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.logits.dim(),
            targets.dim()
        )));
    }
    Ok(())
}

/// Mean over instances of the summed per-class binary cross-entropy.
pub fn bce_loss<T: Scalar>(pred: &PredictionMatrix<T>, pseudo: &PseudoLabelMatrix) -> Result<T, TrainError> {
    let targets = pseudo.to_real::<T>();
    check_targets(pred, targets.view())?;
    Ok(bce_from_logits(pred.logits(), targets.view()))
}

/// [`bce_loss`] against targets anywhere in `[0, 1]`.
pub fn bce_loss_soft<T: Scalar>(pred: &PredictionMatrix<T>, targets: ArrayView2<'_, T>) -> Result<T, TrainError> {
    check_targets(pred, targets)?;
    Ok(bce_from_logits(pred.logits(), targets))
}

/// Loss of `classifier` on `(x, targets)` and its gradient with respect to
/// the classifier matrix `W`.
pub fn loss_and_upstream<T: Scalar>(
    classifier: &Classifier<T>,
    x: &FeatureMatrix<T>,
    targets: ArrayView2<'_, T>,
) -> Result<(T, Array2<T>), TrainError> {
    let pred = predict(classifier, x)?;
    check_targets(&pred, targets)?;
    let loss = bce_from_logits(pred.logits(), targets);
    let inv_n = T::one() / T::from_count(x.n());
    let mut dz = pred.logits.mapv(sigmoid);
    Zip::from(&mut dz).and(targets).for_each(|g, &y| *g = (*g - y) * inv_n);
    Ok((loss, dz.t().dot(&x.values())))
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub classifier: Classifier<T>,
    /// Loss before every epoch, then the final loss.
    pub losses: Vec<T>,
}

/// Full-batch gradient descent of binary cross-entropy through the classifier.
pub fn train<T: Scalar>(
    x: &FeatureMatrix<T>,
    targets: ArrayView2<'_, T>,
    mut classifier: Classifier<T>,
    cfg: &TrainConfig,
) -> Result<Trained<T>, TrainError> {
    cfg.validate()?;
    if targets.nrows() != x.n() {
        return Err(TrainError::Shape(format!("{} targets for {} instances", targets.nrows(), x.n())));
    }
    if targets.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(TrainError::Config("targets must lie in [0, 1]".into()));
    }
    let lr = T::lit(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, upstream) = loss_and_upstream(&classifier, x, targets)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        losses.push(loss);
        classifier.step(upstream.view(), lr, cfg.freeze_embeddings)?;
    }
    let (last, _) = loss_and_upstream(&classifier, x, targets)?;
    if !last.is_finite() {
        return Err(TrainError::Diverged(cfg.epochs));
    }
    if let Some(&first) = losses.first() {
        if last > first && cfg.lr <= DEFAULT_TRAIN_LR {
            warn!("training loss rose from {first} to {last}");
        }
    }
    losses.push(last);
    Ok(Trained { classifier, losses })
}

/// Everything [`run_pipeline`] needs besides the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub le: LeConfig,
    pub train: TrainConfig,
    pub gcn: GcnConfig,
}

/// The three data splits, plus optional pre-computed label embeddings.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a, T> {
    pub train_x: &'a FeatureMatrix<T>,
    pub train_partial: &'a LabelMatrix,
    pub val_x: &'a FeatureMatrix<T>,
    pub val_full: &'a LabelMatrix,
    pub test_x: &'a FeatureMatrix<T>,
    pub test_full: &'a LabelMatrix,
    pub embeddings: Option<&'a LabelEmbeddings<T>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub predictions: PredictionMatrix<T>,
    pub report: MetricsReport,
    pub soft: SoftLabelMatrix<T>,
    /// Binary training targets.
    pub pseudo: PseudoLabelMatrix,
    pub classifier: Classifier<T>,
    pub train_losses: Vec<T>,
}

impl<'a, T: Scalar> PipelineData<'a, T> {
    /// Checks that the splits agree on widths and class counts.
    pub fn validate(&self) -> Result<(), TrainError> {
        let c = self.train_partial.classes();
        let d = self.train_x.d();
        let shape = |msg: String| Err(TrainError::Shape(msg));
        if self.train_partial.kind() != LabelKind::Partial {
            return Err(TrainError::Config("training labels must be partial".into()));
        }
        if self.train_x.n() != self.train_partial.n() {
            return shape(format!("train: {} features vs {} labels", self.train_x.n(), self.train_partial.n()));
        }
        if self.val_x.n() != self.val_full.n() {
            return shape(format!("val: {} features vs {} labels", self.val_x.n(), self.val_full.n()));
        }
        if self.test_x.n() != self.test_full.n() {
            return shape(format!("test: {} features vs {} labels", self.test_x.n(), self.test_full.n()));
        }
        if self.val_x.d() != d || self.test_x.d() != d {
            return shape(format!("feature widths differ: {d}, {}, {}", self.val_x.d(), self.test_x.d()));
        }
        if self.val_full.classes() != c || self.test_full.classes() != c {
            return shape(format!(
                "class counts differ: {c}, {}, {}",
                self.val_full.classes(),
                self.test_full.classes()
            ));
        }
        if let Some(e) = self.embeddings {
            if e.classes() != c {
                return shape(format!("{} label embeddings for {c} classes", e.classes()));
            }
        }
        Ok(())
    }
}

/// Soft labels, then binary training targets, as selected by the ablation
/// flags.
pub fn build_targets<T: Scalar>(
    data: &PipelineData<'_, T>,
    cfg: &PipelineConfig,
) -> Result<(SoftLabelMatrix<T>, PseudoLabelMatrix), TrainError> {
    let ablation = cfg.train.ablation;
    let soft = if ablation.enhancement {
        info!("enhancing labels: n={} steps={}", data.train_partial.n(), cfg.le.steps);
        enhance(data.train_x, data.train_partial, &cfg.le)?
    } else {
        let bg = cfg.le.init_bg.unwrap_or(1.0 / data.train_partial.classes() as f64);
        init_soft_labels(data.train_partial, T::lit(bg))?
    };
    let pseudo = pseudo_from_soft(data, &soft, ablation)?;
    Ok((soft, pseudo))
}

/// Training targets from already computed soft labels. Without prior-guided
/// pseudo-labels they are the single positives with every unobserved entry
/// negative, whether or not enhancement ran.
pub fn pseudo_from_soft<T: Scalar>(
    data: &PipelineData<'_, T>,
    soft: &SoftLabelMatrix<T>,
    ablation: Ablation,
) -> Result<PseudoLabelMatrix, TrainError> {
    if ablation.prior_pseudo {
        let priors = estimate_priors::<T>(data.val_full, data.train_partial.n())?;
        Ok(generate(soft, &priors, data.train_partial)?)
    } else {
        Ok(single_label_pseudo(data.train_partial))
    }
}

/// Initial classifier: GCN over the validation label graph, or a free
/// `C x d` matrix when the GCN stage is ablated.
pub fn initial_classifier<T: Scalar>(
    classes: usize,
    feature_dim: usize,
    val_full: &LabelMatrix,
    embeddings: Option<&LabelEmbeddings<T>>,
    cfg: &PipelineConfig,
) -> Result<Classifier<T>, TrainError> {
    let (c, d) = (classes, feature_dim);
    if val_full.classes() != c {
        return Err(TrainError::Shape(format!("{} validation classes for {c} classes", val_full.classes())));
    }
    let seed = cfg.train.seed;
    if !cfg.train.ablation.gcn {
        let mut rng = stage_rng(seed, "plain-init");
        // Stored as C x d; fan-in is the feature width.
        let w = scaled_normal::<T, _>(d, c, &mut rng).reversed_axes();
        return Ok(Classifier::Plain { w: w.as_standard_layout().to_owned() });
    }
    let graph = normalize(cooccurrence::<T>(val_full));
    let embeddings = match embeddings {
        Some(e) => e.clone(),
        None => LabelEmbeddings::random(c, cfg.gcn.embed_dim, &mut stage_rng(seed, "label-embeddings")),
    };
    let params = GcnParameters::random(embeddings.dim(), cfg.gcn.hidden_dim, d, &mut stage_rng(seed, "gcn-init"));
    Classifier::gcn(graph, embeddings, params)
}

/// enhance -> pseudo-labels -> label graph -> train -> predict -> evaluate.
pub fn run_pipeline<T: Scalar>(data: &PipelineData<'_, T>, cfg: &PipelineConfig) -> Result<PipelineOutput<T>, TrainError> {
    data.validate()?;
    let (soft, pseudo) = build_targets(data, cfg)?;
    finish_pipeline(data, cfg, soft, pseudo)
}

/// Second half of [`run_pipeline`]: train on `pseudo`, predict the test
/// split and score it.
pub fn finish_pipeline<T: Scalar>(
    data: &PipelineData<'_, T>,
    cfg: &PipelineConfig,
    soft: SoftLabelMatrix<T>,
    pseudo: PseudoLabelMatrix,
) -> Result<PipelineOutput<T>, TrainError> {
    data.validate()?;
    let init = initial_classifier(
        data.train_partial.classes(),
        data.train_x.d(),
        data.val_full,
        data.embeddings,
        cfg,
    )?;
    info!("training: ablation={} epochs={}", cfg.train.ablation, cfg.train.epochs);
    let targets: Array2<T> = pseudo.to_real();
    let trained = train(data.train_x, targets.view(), init, &cfg.train)?;
    if let (Some(first), Some(last)) = (trained.losses.first(), trained.losses.last()) {
        info!("training loss {first} -> {last}");
    }
    let predictions = predict(&trained.classifier, data.test_x)?;
    let report = evaluate(predictions.values(), data.test_full.values())?;
    Ok(PipelineOutput {
        predictions,
        report,
        soft,
        pseudo,
        classifier: trained.classifier,
        train_losses: trained.losses,
    })
}

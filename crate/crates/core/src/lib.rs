//! Weakly-supervised multi-label learning from single-positive labels.
//!
//! The pipeline recovers soft label distributions by contrastive label
//! enhancement over a feature-space neighbour graph, converts them into
//! binary pseudo-labels using class priors estimated on a small fully
//! labelled validation split, and trains a linear multi-label classifier
//! whose weights are generated by a two-layer GCN over label co-occurrence.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not care.

pub mod cli;
pub mod data;
pub mod label_enhancement;
pub mod label_graph;
pub mod metrics;
pub mod pseudo_labeling;
pub mod rng;
pub mod scalar;
pub mod theory;
pub mod trainer;

pub use scalar::Scalar;

pub type FeatureMatrix64 = data::FeatureMatrix<f64>;
pub type FeatureMatrix32 = data::FeatureMatrix<f32>;
pub type SoftLabelMatrix64 = label_enhancement::SoftLabelMatrix<f64>;
pub type SoftLabelMatrix32 = label_enhancement::SoftLabelMatrix<f32>;
pub type PredictionMatrix64 = trainer::PredictionMatrix<f64>;
pub type PredictionMatrix32 = trainer::PredictionMatrix<f32>;
pub type LabelEmbeddings64 = label_graph::LabelEmbeddings<f64>;
pub type LabelEmbeddings32 = label_graph::LabelEmbeddings<f32>;
pub type GcnParameters64 = label_graph::GcnParameters<f64>;
pub type GcnParameters32 = label_graph::GcnParameters<f32>;
pub type Classifier64 = trainer::Classifier<f64>;
pub type Classifier32 = trainer::Classifier<f32>;
